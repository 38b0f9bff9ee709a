//! Siamese encoder, three-query decoder and mask head.
//!
//! Data flow for a bi-temporal pair `(t1, t2)`:
//!
//! 1. Shared stem and per-stage stride-2 convolutions with a [`Dmfe`] block
//!    produce one feature pyramid per image; a [`Mdfm`] per stage fuses the
//!    two into a difference pyramid.
//! 2. Each stage's three pyramids are projected to `decoder_dim`, flattened
//!    to tokens, and tagged with 2-D sinusoidal positions and a learned
//!    stream embedding.
//! 3. The query sequence `[e1, e2, e_cd]` passes through one pre-norm
//!    self-attention / cross-attention / projection layer per stage, then a
//!    final projection yields one embedding per task.
//! 4. Each task's mask logit is the channel dot product of its embedding with
//!    a dense pixel feature map built from its pyramid, bilinearly
//!    upsampled to the input size.

mod config;

pub use config::{ModelConfig, PoolSetting};

use crate::autodiff::{Tape, Var};
use crate::blocks::{Dmfe, Mdfm};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, LayerNorm, Linear, MultiHeadAttention};
use crate::param::{ParamBuilder, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Element, Interp, Shape, Tensor};

/// The three prediction tasks, in output order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    /// Building extraction on the first image.
    Bx1,
    /// Building extraction on the second image.
    Bx2,
    /// Building change between the two images.
    Cd,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Bx1, Task::Bx2, Task::Cd];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Report key.
    pub fn key(self) -> &'static str {
        match self {
            Task::Bx1 => "bx_t1",
            Task::Bx2 => "bx_t2",
            Task::Cd => "cd",
        }
    }
}

#[derive(Clone, Debug)]
struct Stage {
    down: Conv2d,
    dmfe: Dmfe,
    mdfm: Mdfm,
    token_temporal: Conv2d,
    token_diff: Conv2d,
    pixel_temporal: Conv2d,
    pixel_diff: Conv2d,
}

#[derive(Clone, Debug)]
struct DecoderLayer {
    norm_self: LayerNorm,
    self_attn: MultiHeadAttention,
    norm_cross: LayerNorm,
    cross_attn: MultiHeadAttention,
    norm_proj: LayerNorm,
    mlp_proj: Linear,
}

/// Per-stage features of both images and their fused difference.
#[derive(Clone, Debug)]
pub struct EncoderPyramids {
    pub f1: Vec<Var>,
    pub f2: Vec<Var>,
    pub fdiff: Vec<Var>,
    /// `|f1 - f2|` before fusion, per stage.
    pub diff_terms: Vec<Var>,
}

/// Per-task tensors in [`Task::ALL`] order.
#[derive(Clone, Copy, Debug)]
pub struct MaskTriple {
    /// Logits at input resolution, `(n, 1, H, W)`.
    pub logits: [Var; 3],
    /// `sigmoid(logits)`.
    pub probs: [Var; 3],
}

#[derive(Clone, Debug)]
pub struct Forward {
    pub pyramids: EncoderPyramids,
    /// Decoded task embeddings, each `(n, decoder_dim, 1, 1)`.
    pub embeddings: [Var; 3],
    pub masks: MaskTriple,
}

/// Labels and per-sample loss weights for one batch.
#[derive(Clone, Debug)]
pub struct Targets<T> {
    /// `(n, 1, H, W)` binary labels per task; unavailable entries may hold anything in {0, 1}.
    pub labels: [Tensor<T>; 3],
    /// Per-sample availability (0 or 1) per task.
    pub available: [Vec<T>; 3],
}

#[derive(Clone, Debug)]
pub struct Network {
    pub config: ModelConfig,
    stem: Conv2d,
    stages: Vec<Stage>,
    stream_embed: ParamId,
    queries: [ParamId; 3],
    layers: Vec<DecoderLayer>,
    final_norm: LayerNorm,
    e_proj: Linear,
}

/// 2-D sinusoidal position encoding, `(h*w, d)` tokens. The first `d/2`
/// channels encode the row, the rest the column.
pub fn position_encoding<T: Element>(h: usize, w: usize, d: usize) -> Tensor<T> {
    let half = d / 2;
    let freqs: Vec<f64> = (0..half / 2)
        .map(|i| 1.0 / 10000f64.powf(2.0 * i as f64 / half as f64))
        .collect();
    let table = |len: usize| -> Vec<Vec<T>> {
        (0..len)
            .map(|pos| {
                freqs
                    .iter()
                    .flat_map(|f| {
                        let a = pos as f64 * f;
                        [T::from_f64(a.sin()), T::from_f64(a.cos())]
                    })
                    .collect()
            })
            .collect()
    };
    let (rows, cols) = (table(h), table(w));
    let mut data = Vec::with_capacity(h * w * d);
    for row in &rows {
        for col in &cols {
            data.extend_from_slice(row);
            data.extend_from_slice(col);
        }
    }
    Tensor::from_vec(Shape::tokens(h * w, d), data).expect("encoding shape")
}

impl Network {
    /// Build the network and initialise its parameters from `config.seed`.
    pub fn new<T: Element>(config: &ModelConfig) -> Result<(Network, ParamStore<T>)> {
        let mut rng = Rng::new(config.seed);
        Self::with_rng(config, &mut rng)
    }

    pub fn with_rng<T: Element>(
        config: &ModelConfig,
        rng: &mut Rng,
    ) -> Result<(Network, ParamStore<T>)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let d = config.decoder_dim;
        let net = {
            let mut b = ParamBuilder::new(&mut store, rng);
            let (stem, stages) = b.scope("enc", |b| -> Result<_> {
                let stem = Conv2d::new(
                    b,
                    "stem",
                    config.in_channels,
                    config.base_channels,
                    3,
                    2,
                    true,
                )?;
                let mut stages = Vec::with_capacity(config.stages);
                let mut c_prev = config.base_channels;
                for (i, &c) in config.stage_channels.iter().enumerate() {
                    let stride = if i == 0 { 1 } else { 2 };
                    let stage = b.scope(&format!("stage{}", i + 1), |b| -> Result<Stage> {
                        Ok(Stage {
                            down: Conv2d::new(b, "down", c_prev, c, 3, stride, true)?,
                            dmfe: Dmfe::new(b, "dmfe", c, config.pools(), config.value_source)?,
                            mdfm: Mdfm::new(b, "mdfm", c)?,
                            token_temporal: Conv2d::new(b, "token_temporal", c, d, 1, 1, true)?,
                            token_diff: Conv2d::new(b, "token_diff", c, d, 1, 1, true)?,
                            pixel_temporal: Conv2d::new(b, "pixel_temporal", c, d, 1, 1, true)?,
                            pixel_diff: Conv2d::new(b, "pixel_diff", c, d, 1, 1, true)?,
                        })
                    })?;
                    stages.push(stage);
                    c_prev = c;
                }
                Ok((stem, stages))
            })?;
            b.scope("dec", |b| -> Result<Network> {
                let stream_embed = b.normal("stream_embed", Shape::tokens(3, d), 0.02)?;
                let queries = b.scope("query", |b| -> Result<[ParamId; 3]> {
                    Ok([
                        b.normal("e1", Shape::tokens(1, d), 1.0)?,
                        b.normal("e2", Shape::tokens(1, d), 1.0)?,
                        b.normal("e_cd", Shape::tokens(1, d), 1.0)?,
                    ])
                })?;
                let mut layers = Vec::with_capacity(config.decoder_layers);
                for i in 0..config.decoder_layers {
                    layers.push(b.scope(
                        &format!("layer{}", i + 1),
                        |b| -> Result<DecoderLayer> {
                            Ok(DecoderLayer {
                                norm_self: LayerNorm::new(b, "norm_self", d)?,
                                self_attn: MultiHeadAttention::new(
                                    b,
                                    "self_attn",
                                    d,
                                    config.heads,
                                )?,
                                norm_cross: LayerNorm::new(b, "norm_cross", d)?,
                                cross_attn: MultiHeadAttention::new(
                                    b,
                                    "cross_attn",
                                    d,
                                    config.heads,
                                )?,
                                norm_proj: LayerNorm::new(b, "norm_proj", d)?,
                                mlp_proj: Linear::new(b, "mlp_proj", d, d, true)?,
                            })
                        },
                    )?);
                }
                Ok(Network {
                    config: config.clone(),
                    stem: stem.clone(),
                    stages: stages.clone(),
                    stream_embed,
                    queries,
                    layers,
                    final_norm: LayerNorm::new(b, "final_norm", d)?,
                    e_proj: Linear::new(b, "e_proj", d, d, true)?,
                })
            })?
        };
        Ok((net, store))
    }

    /// Ids of the three learnable query embeddings in task order.
    pub fn query_params(&self) -> [ParamId; 3] {
        self.queries
    }

    fn encode_one<T: Element>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        img: Var,
    ) -> Result<Vec<Var>> {
        let stem = self.stem.forward(tape, store, img)?;
        let mut x = tape.silu(stem);
        let mut feats = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let down = stage.down.forward(tape, store, x)?;
            let act = tape.silu(down);
            x = stage.dmfe.forward(tape, store, act)?;
            feats.push(x);
        }
        Ok(feats)
    }

    /// Siamese encoder plus per-stage differential fusion.
    pub fn encode<T: Element>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        t1: Var,
        t2: Var,
    ) -> Result<EncoderPyramids> {
        let (s1, s2) = (tape.shape(t1), tape.shape(t2));
        if s1 != s2 {
            return Err(Error::Shape(format!(
                "image pair shapes differ: {s1} vs {s2}"
            )));
        }
        if s1.c != self.config.in_channels {
            return Err(Error::Shape(format!(
                "expected {} input channels, got {s1}",
                self.config.in_channels
            )));
        }
        self.config.check_input_size(s1.h, s1.w)?;
        let f1 = self.encode_one(tape, store, t1)?;
        let f2 = self.encode_one(tape, store, t2)?;
        let mut fdiff = Vec::with_capacity(f1.len());
        let mut diff_terms = Vec::with_capacity(f1.len());
        for (stage, (&a, &b)) in self.stages.iter().zip(f1.iter().zip(&f2)) {
            let trace = stage.mdfm.forward_traced(tape, store, a, b)?;
            fdiff.push(trace.output);
            diff_terms.push(trace.diff);
        }
        Ok(EncoderPyramids {
            f1,
            f2,
            fdiff,
            diff_terms,
        })
    }

    /// Token sequence for decoder layer `stage`: per batch item, the
    /// time-1, time-2 and difference streams of `h*w` tokens each.
    pub fn tokenize_stage<T: Element>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        pyr: &EncoderPyramids,
        stage: usize,
    ) -> Result<Var> {
        let st = self
            .stages
            .get(stage)
            .ok_or_else(|| Error::Config(format!("stage {stage} does not exist")))?;
        let d = self.config.decoder_dim;
        let s = tape.shape(pyr.f1[stage]);
        let rows = s.n * s.plane();
        let pos = position_encoding::<T>(s.h, s.w, d);
        let tiled: Vec<T> = (0..s.n).flat_map(|_| pos.data().iter().copied()).collect();
        let pos = tape.constant(Tensor::from_vec(Shape::tokens(rows, d), tiled)?);
        let embed = tape.param(store, self.stream_embed);
        let mut streams = Vec::with_capacity(3);
        for (k, (feat, proj)) in [
            (pyr.f1[stage], &st.token_temporal),
            (pyr.f2[stage], &st.token_temporal),
            (pyr.fdiff[stage], &st.token_diff),
        ]
        .into_iter()
        .enumerate()
        {
            let p = proj.forward(tape, store, feat)?;
            let tokens = tape.to_tokens(p);
            let with_pos = tape.add(tokens, pos)?;
            let tag = tape.gather_rows(embed, &vec![k; rows])?;
            streams.push(tape.add(with_pos, tag)?);
        }
        tape.concat_groups(&streams, s.n)
    }

    /// Decode the three task embeddings, each `(n, decoder_dim, 1, 1)`.
    pub fn decode<T: Element>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        pyr: &EncoderPyramids,
    ) -> Result<[Var; 3]> {
        if self.layers.len() != pyr.f1.len() {
            return Err(Error::Config(format!(
                "{} decoder layers for {} encoder stages",
                self.layers.len(),
                pyr.f1.len()
            )));
        }
        let n = tape.shape(pyr.f1[0]).n;
        let q: Vec<Var> = self
            .queries
            .iter()
            .map(|&id| tape.param(store, id))
            .collect();
        let seq = tape.concat_groups(&q, 1)?;
        let tile: Vec<usize> = (0..n).flat_map(|_| 0..3).collect();
        let mut e = tape.gather_rows(seq, &tile)?;
        for (i, layer) in self.layers.iter().enumerate() {
            let tokens = self.tokenize_stage(tape, store, pyr, i)?;
            let h = layer.norm_self.forward(tape, store, e)?;
            let sa = layer.self_attn.forward(tape, store, h, h, n)?;
            e = tape.add(e, sa)?;
            let h = layer.norm_cross.forward(tape, store, e)?;
            let ca = layer.cross_attn.forward(tape, store, h, tokens, n)?;
            e = tape.add(e, ca)?;
            let h = layer.norm_proj.forward(tape, store, e)?;
            let p = layer.mlp_proj.forward(tape, store, h)?;
            e = tape.add(e, p)?;
        }
        let h = self.final_norm.forward(tape, store, e)?;
        let out = self.e_proj.forward(tape, store, h)?;
        let mut split = [out; 3];
        for (k, slot) in split.iter_mut().enumerate() {
            let rows: Vec<usize> = (0..n).map(|b| b * 3 + k).collect();
            *slot = tape.gather_rows(out, &rows)?;
        }
        Ok(split)
    }

    /// Dense pixel features at stage-1 resolution: sum over stages of the
    /// projected, bilinearly upsampled pyramid.
    fn pixel_features<T: Element>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        pyramid: &[Var],
        diff: bool,
    ) -> Result<Var> {
        let base_h = tape.shape(pyramid[0]).h;
        let mut acc: Option<Var> = None;
        for (stage, &feat) in self.stages.iter().zip(pyramid) {
            let proj = if diff {
                &stage.pixel_diff
            } else {
                &stage.pixel_temporal
            };
            let p = proj.forward(tape, store, feat)?;
            let factor = base_h / tape.shape(feat).h;
            let up = tape.upsample(p, factor, Interp::Bilinear)?;
            acc = Some(match acc {
                None => up,
                Some(a) => tape.add(a, up)?,
            });
        }
        acc.ok_or_else(|| Error::Config("network has no stages".into()))
    }

    /// Per-task mask logits and probabilities at input resolution.
    pub fn predict_masks<T: Element>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        pyr: &EncoderPyramids,
        embeddings: &[Var; 3],
    ) -> Result<MaskTriple> {
        let features = [
            self.pixel_features(tape, store, &pyr.f1, false)?,
            self.pixel_features(tape, store, &pyr.f2, false)?,
            self.pixel_features(tape, store, &pyr.fdiff, true)?,
        ];
        let mut logits = [features[0]; 3];
        let mut probs = [features[0]; 3];
        for k in 0..3 {
            let half_res = tape.channel_dot(features[k], embeddings[k])?;
            logits[k] = tape.upsample(half_res, 2, Interp::Bilinear)?;
            probs[k] = tape.sigmoid(logits[k]);
        }
        Ok(MaskTriple { logits, probs })
    }

    pub fn forward<T: Element>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        t1: Var,
        t2: Var,
    ) -> Result<Forward> {
        let pyramids = self.encode(tape, store, t1, t2)?;
        let embeddings = self.decode(tape, store, &pyramids)?;
        let masks = self.predict_masks(tape, store, &pyramids, &embeddings)?;
        Ok(Forward {
            pyramids,
            embeddings,
            masks,
        })
    }

    /// `sum_k weight_k * L_k`, with `L_k` the pixel-mean binary cross-entropy
    /// over samples where task `k` is available.
    pub fn loss<T: Element>(
        &self,
        tape: &mut Tape<T>,
        masks: &MaskTriple,
        targets: &Targets<T>,
    ) -> Result<Var> {
        let mut total: Option<Var> = None;
        for task in Task::ALL {
            let k = task.index();
            let l =
                tape.bce_with_logits(masks.logits[k], &targets.labels[k], &targets.available[k])?;
            let l = tape.scale(l, T::from_f64(self.config.loss_weights[k]));
            total = Some(match total {
                None => l,
                Some(t) => tape.add(t, l)?,
            });
        }
        Ok(total.expect("three tasks"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn position_encoding_layout() {
        let p = position_encoding::<f64>(2, 3, 8);
        assert_eq!(p.shape(), Shape::tokens(6, 8));
        // Token (y=1, x=2): first half encodes the row, second half the column.
        let row = &p.data()[5 * 8..6 * 8];
        assert!((row[0] - 1f64.sin()).abs() < 1e-15);
        assert!((row[1] - 1f64.cos()).abs() < 1e-15);
        assert!((row[4] - 2f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn stage_resolutions_and_channels() {
        let cfg = ModelConfig::default();
        let (net, store) = Network::new::<f32>(&cfg).unwrap();
        let mut tape = Tape::new();
        let mut rng = Rng::new(1);
        let a = tape.constant(rng.uniform_tensor(Shape::new(1, 3, 64, 64), 0.0, 1.0));
        let b = tape.constant(rng.uniform_tensor(Shape::new(1, 3, 64, 64), 0.0, 1.0));
        let pyr = net.encode(&mut tape, &store, a, b).unwrap();
        let shapes: Vec<Shape> = pyr.f1.iter().map(|&v| tape.shape(v)).collect();
        assert_eq!(
            shapes,
            [
                Shape::new(1, 16, 32, 32),
                Shape::new(1, 32, 16, 16),
                Shape::new(1, 64, 8, 8),
                Shape::new(1, 128, 4, 4)
            ]
        );
        for ((&f2, &fdiff), &shape) in pyr.f2.iter().zip(&pyr.fdiff).zip(&shapes) {
            assert_eq!(tape.shape(f2), shape);
            assert_eq!(tape.shape(fdiff), shape);
        }
        let tokens = net.tokenize_stage(&mut tape, &store, &pyr, 3).unwrap();
        assert_eq!(tape.shape(tokens), Shape::tokens(48, 128));
    }

    #[test]
    fn rejects_bad_input_size() {
        let (net, store) = Network::new::<f32>(&ModelConfig::tiny()).unwrap();
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(Shape::new(1, 3, 36, 36)));
        let err = net.encode(&mut tape, &store, a, a).unwrap_err().to_string();
        assert!(err.contains("divisible by 8"), "{err}");
    }
}
