use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, PoolMode};
use crate::param::{ParamBuilder, ParamId, ParamStore};
use crate::tensor::{Element, Interp};

/// Lower bound applied to the channel variance before it divides.
pub const SSFC_VARIANCE_FLOOR: f64 = 1e-5;

/// Soft upper bound on the sigmoid argument, so the weight stays below 1 in
/// float32 (`sigmoid(15) = 1 - 3.1e-7`). At the minimum argument of 1/2 the
/// bound shifts the weight by about 1.2e-7.
pub const SSFC_ARGUMENT_CEILING: f64 = 15.0;

/// Pooling applied to the query and key maps. `None` keeps them at full resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolPair {
    pub query: Option<PoolMode>,
    pub key: Option<PoolMode>,
}

impl PoolPair {
    pub const DEFAULT: PoolPair = PoolPair {
        query: Some(PoolMode::Avg),
        key: Some(PoolMode::Max),
    };
    pub const NONE: PoolPair = PoolPair {
        query: None,
        key: None,
    };

    pub fn validate(&self) -> Result<()> {
        if self.query.is_some() != self.key.is_some() {
            return Err(Error::Config(
                "query and key pooling must both be set or both be none".into(),
            ));
        }
        Ok(())
    }

    pub fn is_pooled(&self) -> bool {
        self.query.is_some()
    }
}

impl Default for PoolPair {
    fn default() -> Self {
        PoolPair::DEFAULT
    }
}

/// Where the channel-averaged value map comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueSource {
    /// Channel mean of the V projection.
    #[default]
    Projection,
    /// Channel mean of the block input.
    Input,
}

#[derive(Clone, Debug)]
pub struct Ssfc {
    pub channels: usize,
    pub pools: PoolPair,
    pub value_source: ValueSource,
    pub m_proj: Conv2d,
    pub q_proj: Conv2d,
    pub k_proj: Conv2d,
    pub v_proj: Conv2d,
    pub fuse: Conv2d,
}

/// Intermediate values of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct SsfcTrace {
    pub q_bar: Var,
    pub k_bar: Var,
    pub variance: Var,
    /// `sigmoid((Q̄ - K̄)² / 2σ² + 1/2)` at pooled resolution.
    pub attention: Var,
    pub value_mean: Var,
    pub weighted: Var,
    pub output: Var,
}

fn pool<T: Element>(tape: &mut Tape<T>, x: Var, mode: Option<PoolMode>) -> Result<Var> {
    match mode {
        None => Ok(x),
        Some(PoolMode::Avg) => tape.pool2d(x, PoolMode::Avg, 3, 2, 1),
        Some(PoolMode::Max) => tape.pool2d(x, PoolMode::Max, 2, 2, 0),
    }
}

impl Ssfc {
    pub fn new<T: Element>(
        b: &mut ParamBuilder<'_, T>,
        name: &str,
        channels: usize,
        pools: PoolPair,
        value_source: ValueSource,
    ) -> Result<Self> {
        if channels < 2 || !channels.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "spatial-spectral block needs an even channel count, got {channels}"
            )));
        }
        pools.validate()?;
        let half = channels / 2;
        b.scope(name, |b| {
            Ok(Ssfc {
                channels,
                pools,
                value_source,
                m_proj: Conv2d::new(b, "m_proj", channels, half, 1, 1, true)?,
                q_proj: Conv2d::new(b, "q_proj", channels, half, 1, 1, true)?,
                k_proj: Conv2d::new(b, "k_proj", channels, half, 1, 1, true)?,
                v_proj: Conv2d::new(b, "v_proj", channels, half, 1, 1, true)?,
                fuse: Conv2d::new(b, "fuse", channels, channels, 1, 1, true)?,
            })
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        [
            &self.m_proj,
            &self.q_proj,
            &self.k_proj,
            &self.v_proj,
            &self.fuse,
        ]
        .into_iter()
        .flat_map(|c| c.params())
        .collect()
    }

    pub fn forward<T: Element>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        Ok(self.forward_traced(tape, store, x)?.output)
    }

    pub fn forward_traced<T: Element>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<SsfcTrace> {
        let s = tape.shape(x);
        if s.c != self.channels {
            return Err(Error::Shape(format!(
                "spatial-spectral block built for {} channels, input has {}",
                self.channels, s.c
            )));
        }
        if self.pools.is_pooled() && (!s.h.is_multiple_of(2) || !s.w.is_multiple_of(2)) {
            return Err(Error::Shape(format!(
                "spatial-spectral block needs even height and width, got {}x{}",
                s.h, s.w
            )));
        }
        let m = self.m_proj.forward(tape, store, x)?;
        let q = self.q_proj.forward(tape, store, x)?;
        let k = self.k_proj.forward(tape, store, x)?;
        let v = self.v_proj.forward(tape, store, x)?;

        let q_bar = pool(tape, q, self.pools.query)?;
        let k_bar = pool(tape, k, self.pools.key)?;
        let diff = tape.sub(q_bar, k_bar)?;
        let var = tape.channel_var(diff);
        let variance = tape.clamp_min(var, T::from_f64(SSFC_VARIANCE_FLOOR));
        let sq = tape.mul(diff, diff)?;
        let two_var = tape.scale(variance, T::from_f64(2.0));
        let ratio = tape.div(sq, two_var)?;
        let arg = tape.add_scalar(ratio, T::from_f64(0.5));
        let arg = tape.soft_ceiling(arg, T::from_f64(SSFC_ARGUMENT_CEILING));
        let attention = tape.sigmoid(arg);

        let value_mean = match self.value_source {
            ValueSource::Projection => tape.channel_mean(v),
            ValueSource::Input => tape.channel_mean(x),
        };
        let full = if self.pools.is_pooled() {
            tape.upsample(attention, 2, Interp::Nearest)?
        } else {
            attention
        };
        let weighted = tape.mul(full, value_mean)?;
        let cat = tape.concat_c(&[m, weighted])?;
        let output = self.fuse.forward(tape, store, cat)?;
        Ok(SsfcTrace {
            q_bar,
            k_bar,
            variance,
            attention,
            value_mean,
            weighted,
            output,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::{sigmoid, Shape, Tensor};

    fn block(channels: usize, pools: PoolPair) -> (ParamStore<f64>, Ssfc) {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(2);
        let b = Ssfc::new(
            &mut ParamBuilder::new(&mut store, &mut rng),
            "ssfc",
            channels,
            pools,
            ValueSource::Projection,
        )
        .unwrap();
        (store, b)
    }

    #[test]
    fn attention_bounds_and_shape() {
        let (store, b) = block(8, PoolPair::DEFAULT);
        let mut tape = Tape::new();
        let x = tape.constant(Rng::new(5).normal_tensor(Shape::new(2, 8, 8, 8), 1.0));
        let t = b.forward_traced(&mut tape, &store, x).unwrap();
        assert_eq!(tape.shape(t.attention), Shape::new(2, 4, 4, 4));
        assert_eq!(tape.shape(t.output), Shape::new(2, 8, 8, 8));
        let floor = sigmoid(0.5f64);
        for &a in tape.value(t.attention).data() {
            assert!(a >= floor - 1e-12 && a < 1.0);
        }
    }

    #[test]
    fn projection_widths_are_quarter_of_dmfe_input() {
        let (store, b) = block(8, PoolPair::DEFAULT);
        for conv in [&b.m_proj, &b.q_proj, &b.k_proj, &b.v_proj] {
            assert_eq!(store.get(conv.weight).value.shape(), Shape::new(4, 8, 1, 1));
        }
        assert_eq!(b.params().len(), 10);
    }

    #[test]
    fn rejects_odd_spatial_dims() {
        let (store, b) = block(4, PoolPair::DEFAULT);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(Shape::new(1, 4, 5, 6)));
        let err = b.forward(&mut tape, &store, x).unwrap_err().to_string();
        assert!(err.contains("even"), "{err}");
    }

    #[test]
    fn unpooled_variant_runs_at_full_resolution() {
        let (store, b) = block(4, PoolPair::NONE);
        let mut tape = Tape::new();
        let x = tape.constant(Rng::new(1).normal_tensor(Shape::new(1, 4, 5, 5), 1.0));
        let t = b.forward_traced(&mut tape, &store, x).unwrap();
        assert_eq!(tape.shape(t.attention), Shape::new(1, 2, 5, 5));
    }

    #[test]
    fn mixed_pool_pair_rejected() {
        let pools = PoolPair {
            query: Some(PoolMode::Avg),
            key: None,
        };
        let mut store = ParamStore::<f32>::new();
        let mut rng = Rng::new(0);
        assert!(Ssfc::new(
            &mut ParamBuilder::new(&mut store, &mut rng),
            "s",
            4,
            pools,
            ValueSource::Projection
        )
        .is_err());
    }
}
