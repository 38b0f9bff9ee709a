//! Batching, augmentation, the training loop and evaluation.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::io::BiTemporalSample;
use crate::metrics::ConfusionCounts;
use crate::network::{ModelConfig, Network, Targets, Task};
use crate::nn::AdamState;
use crate::param::ParamStore;
use crate::rng::Rng;
use crate::tensor::{Shape, Tensor};

/// Which tasks contribute to the loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskFilter {
    /// Building extraction on both images.
    Bx,
    /// Change detection.
    Cd,
    #[default]
    Both,
}

impl TaskFilter {
    pub fn allows(self, task: Task) -> bool {
        match self {
            TaskFilter::Both => true,
            TaskFilter::Bx => task != Task::Cd,
            TaskFilter::Cd => task == Task::Cd,
        }
    }
}

impl std::str::FromStr for TaskFilter {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bx" => Ok(TaskFilter::Bx),
            "cd" => Ok(TaskFilter::Cd),
            "both" => Ok(TaskFilter::Both),
            other => Err(Error::Config(format!(
                "unknown task filter {other:?} (bx|cd|both)"
            ))),
        }
    }
}

/// One flip/crop applied identically to every raster of a sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub hflip: bool,
    pub vflip: bool,
    pub top: usize,
    pub left: usize,
    pub size: usize,
}

impl Geometry {
    pub fn identity(size: usize) -> Self {
        Geometry {
            hflip: false,
            vflip: false,
            top: 0,
            left: 0,
            size,
        }
    }

    /// Horizontal and vertical flips with probability 0.5 each, then a
    /// random `size x size` crop.
    pub fn random(rng: &mut Rng, h: usize, w: usize, size: usize) -> Self {
        let hflip = rng.bernoulli(0.5);
        let vflip = rng.bernoulli(0.5);
        let top = rng.int_in(0, h - size);
        let left = rng.int_in(0, w - size);
        Geometry {
            hflip,
            vflip,
            top,
            left,
            size,
        }
    }

    pub fn apply(&self, t: &Tensor<f32>) -> Tensor<f32> {
        let s = t.shape();
        Tensor::from_fn(Shape::new(s.n, s.c, self.size, self.size), |[n, c, y, x]| {
            let sy = if self.vflip {
                s.h - 1 - (self.top + y)
            } else {
                self.top + y
            };
            let sx = if self.hflip {
                s.w - 1 - (self.left + x)
            } else {
                self.left + x
            };
            t.at(n, c, sy, sx)
        })
    }
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub ids: Vec<String>,
    pub img_t1: Tensor<f32>,
    pub img_t2: Tensor<f32>,
    pub targets: Targets<f32>,
}

/// Stack samples into a batch. Missing or filtered-out labels get an
/// all-zero placeholder and availability 0.
pub fn make_batch(
    samples: &[&BiTemporalSample<f32>],
    filter: TaskFilter,
    size: usize,
    mut rng: Option<&mut Rng>,
) -> Result<Batch> {
    let mut img1 = Vec::with_capacity(samples.len());
    let mut img2 = Vec::with_capacity(samples.len());
    let mut labels: [Vec<Tensor<f32>>; 3] = Default::default();
    let mut available: [Vec<f32>; 3] = Default::default();
    for s in samples {
        let (h, w) = s.size();
        if h < size || w < size {
            return Err(Error::Dataset(format!(
                "{} is {h}x{w}, smaller than image_size {size}",
                s.id
            )));
        }
        let geo = match rng.as_deref_mut() {
            Some(r) => Geometry::random(r, h, w, size),
            None => Geometry {
                top: (h - size) / 2,
                left: (w - size) / 2,
                ..Geometry::identity(size)
            },
        };
        img1.push(geo.apply(&s.img_t1));
        img2.push(geo.apply(&s.img_t2));
        for task in Task::ALL {
            let k = task.index();
            match s.mask(task).filter(|_| filter.allows(task)) {
                Some(m) => {
                    labels[k].push(geo.apply(m));
                    available[k].push(1.0);
                }
                None => {
                    labels[k].push(Tensor::zeros(Shape::new(1, 1, size, size)));
                    available[k].push(0.0);
                }
            }
        }
    }
    let [l1, l2, l3] = labels;
    Ok(Batch {
        ids: samples.iter().map(|s| s.id.clone()).collect(),
        img_t1: Tensor::stack_batch(&img1)?,
        img_t2: Tensor::stack_batch(&img2)?,
        targets: Targets {
            labels: [
                Tensor::stack_batch(&l1)?,
                Tensor::stack_batch(&l2)?,
                Tensor::stack_batch(&l3)?,
            ],
            available,
        },
    })
}

/// Mask probabilities for a batch of image pairs, in task order.
pub fn predict(
    net: &Network,
    store: &ParamStore<f32>,
    img_t1: &Tensor<f32>,
    img_t2: &Tensor<f32>,
) -> Result<[Tensor<f32>; 3]> {
    let mut tape = Tape::new();
    let a = tape.constant(img_t1.clone());
    let b = tape.constant(img_t2.clone());
    let fwd = net.forward(&mut tape, store, a, b)?;
    Ok(fwd.masks.probs.map(|p| tape.value(p).clone()))
}

fn accumulate_batch(
    counts: &mut [ConfusionCounts; 3],
    probs: &[Tensor<f32>; 3],
    targets: &Targets<f32>,
) -> Result<()> {
    for k in 0..3 {
        for (i, &a) in targets.available[k].iter().enumerate() {
            if a > 0.0 {
                counts[k].accumulate(&probs[k].batch_item(i), &targets.labels[k].batch_item(i))?;
            }
        }
    }
    Ok(())
}

/// Per-task confusion counts; `None` for tasks without labels in `data`.
pub type TaskCounts = [Option<ConfusionCounts>; 3];

fn eval_shard(
    net: &Network,
    store: &ParamStore<f32>,
    data: &[BiTemporalSample<f32>],
    batch: usize,
) -> Result<[ConfusionCounts; 3]> {
    let size = net.config.image_size;
    let mut counts = [ConfusionCounts::default(); 3];
    let refs: Vec<&BiTemporalSample<f32>> = data.iter().collect();
    for chunk in refs.chunks(batch) {
        let b = make_batch(chunk, TaskFilter::Both, size, None)?;
        let probs = predict(net, store, &b.img_t1, &b.img_t2)?;
        accumulate_batch(&mut counts, &probs, &b.targets)?;
    }
    Ok(counts)
}

/// Evaluate on `data` (center crop to `image_size`), sharding contiguous
/// runs of samples over `threads` workers and merging in shard order.
pub fn evaluate(
    net: &Network,
    store: &ParamStore<f32>,
    data: &[BiTemporalSample<f32>],
    threads: usize,
) -> Result<TaskCounts> {
    let batch = net.config.batch_size;
    let threads = threads.clamp(1, data.len().max(1));
    let per = data.len().div_ceil(threads).max(1);
    let shards: Vec<Result<[ConfusionCounts; 3]>> = if threads == 1 {
        vec![eval_shard(net, store, data, batch)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = data
                .chunks(per)
                .map(|chunk| scope.spawn(move || eval_shard(net, store, chunk, batch)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("evaluation worker panicked"))
                .collect()
        })
    };
    let mut total = [ConfusionCounts::default(); 3];
    for shard in shards {
        for (t, s) in total.iter_mut().zip(shard?) {
            t.merge(&s);
        }
    }
    let mut out: TaskCounts = [None; 3];
    for task in Task::ALL {
        let k = task.index();
        if data.iter().any(|s| s.masks[k].is_some()) {
            out[k] = Some(total[k]);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    /// 1-based epoch number.
    pub epoch: usize,
    pub mean_loss: f64,
    /// Running confusion counts on the (augmented) training batches.
    pub train_counts: [ConfusionCounts; 3],
}

/// Network, parameters and optimizer state advanced one epoch at a time.
pub struct Trainer {
    pub net: Network,
    pub store: ParamStore<f32>,
    pub opt: AdamState<f32>,
    pub filter: TaskFilter,
    /// Completed epochs.
    pub epoch: usize,
}

impl Trainer {
    pub fn new(config: &ModelConfig, filter: TaskFilter) -> Result<Self> {
        let (net, store) = Network::new::<f32>(config)?;
        let opt = AdamState::new(config.adam(), &store);
        Ok(Trainer {
            net,
            store,
            opt,
            filter,
            epoch: 0,
        })
    }

    pub fn steps_per_epoch(&self, len: usize) -> usize {
        len.div_ceil(self.net.config.batch_size)
    }

    /// Continue from saved parameters and optimizer state. The completed
    /// epoch count is recovered from the optimizer step.
    pub fn resume(
        config: &ModelConfig,
        filter: TaskFilter,
        params: &ParamStore<f32>,
        opt: AdamState<f32>,
        train_len: usize,
    ) -> Result<Self> {
        let mut t = Trainer::new(config, filter)?;
        t.store.load_values(params)?;
        if opt.m.len() != t.store.len() {
            return Err(Error::Checkpoint(
                "optimizer state does not match the model".into(),
            ));
        }
        let per = t.steps_per_epoch(train_len) as u64;
        if per == 0 || !opt.step.is_multiple_of(per) {
            return Err(Error::Checkpoint(format!(
                "optimizer step {} is not a whole number of {per}-step epochs",
                opt.step
            )));
        }
        t.epoch = (opt.step / per) as usize;
        t.opt = opt;
        Ok(t)
    }

    /// One pass over `data` in a shuffled order seeded by `seed + epoch`.
    pub fn train_epoch(&mut self, data: &[BiTemporalSample<f32>]) -> Result<EpochStats> {
        if data.is_empty() {
            return Err(Error::Dataset("training split is empty".into()));
        }
        let epoch = self.epoch + 1;
        let cfg = &self.net.config;
        let mut rng = Rng::new(cfg.seed.wrapping_add(epoch as u64));
        let mut order: Vec<usize> = (0..data.len()).collect();
        rng.shuffle(&mut order);
        let mut total_loss = 0.0f64;
        let mut batches = 0usize;
        let mut counts = [ConfusionCounts::default(); 3];
        for chunk in order.chunks(cfg.batch_size) {
            let samples: Vec<&BiTemporalSample<f32>> = chunk.iter().map(|&i| &data[i]).collect();
            let batch = make_batch(&samples, self.filter, cfg.image_size, Some(&mut rng))?;
            let mut tape = Tape::new();
            let a = tape.constant(batch.img_t1.clone());
            let b = tape.constant(batch.img_t2.clone());
            let fwd = self.net.forward(&mut tape, &self.store, a, b)?;
            let loss = self.net.loss(&mut tape, &fwd.masks, &batch.targets)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss {value} in epoch {epoch}, batch {batches} (samples {})",
                    batch.ids.join(", ")
                )));
            }
            let probs = fwd.masks.probs.map(|p| tape.value(p).clone());
            accumulate_batch(&mut counts, &probs, &batch.targets)?;
            let grads = tape.backward(loss)?;
            self.store.zero_grad();
            let active = grads.accumulate_into(&mut self.store);
            self.opt.step(&mut self.store, Some(&active)).map_err(|e| {
                Error::NonFinite(format!(
                    "{e} in epoch {epoch}, batch {batches} (samples {})",
                    batch.ids.join(", ")
                ))
            })?;
            total_loss += f64::from(value);
            batches += 1;
        }
        self.epoch = epoch;
        Ok(EpochStats {
            epoch,
            mean_loss: total_loss / batches as f64,
            train_counts: counts,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn marker_sample() -> BiTemporalSample<f32> {
        let s3 = Shape::new(1, 3, 4, 4);
        let s1 = Shape::new(1, 1, 4, 4);
        let mark = |c| Tensor::from_fn(c, |[_, _, y, x]| if (y, x) == (0, 1) { 1.0 } else { 0.0 });
        BiTemporalSample {
            id: "m".into(),
            img_t1: mark(s3),
            img_t2: mark(s3),
            masks: [Some(mark(s1)), Some(mark(s1)), Some(mark(s1))],
        }
    }

    #[test]
    fn flips_move_marker_consistently() {
        let s = marker_sample();
        let geo = Geometry {
            hflip: true,
            vflip: true,
            top: 0,
            left: 0,
            size: 4,
        };
        let b = make_batch(&[&s], TaskFilter::Both, 4, None).unwrap();
        assert_eq!(b.img_t1.at(0, 2, 0, 1), 1.0);
        for t in [geo.apply(&s.img_t1), geo.apply(&s.img_t2)] {
            assert_eq!(t.at(0, 0, 3, 2), 1.0);
            assert_eq!(t.sum(), 3.0);
        }
        for m in &s.masks {
            let m = geo.apply(m.as_ref().unwrap());
            assert_eq!(m.at(0, 0, 3, 2), 1.0);
        }
    }

    #[test]
    fn random_augmentation_shared_across_rasters() {
        let s = marker_sample();
        let mut rng = Rng::new(5);
        for _ in 0..20 {
            let b = make_batch(&[&s], TaskFilter::Both, 4, Some(&mut rng)).unwrap();
            let pos = |t: &Tensor<f32>| t.data().iter().position(|&v| v == 1.0).unwrap();
            let p = pos(&b.img_t1);
            assert_eq!(pos(&b.img_t2), p);
            for l in &b.targets.labels {
                assert_eq!(pos(l), p);
            }
        }
    }

    #[test]
    fn filter_masks_availability() {
        let s = marker_sample();
        let b = make_batch(&[&s, &s], TaskFilter::Bx, 4, None).unwrap();
        assert_eq!(
            b.targets.available,
            [vec![1.0, 1.0], vec![1.0, 1.0], vec![0.0, 0.0]]
        );
        let b = make_batch(&[&s], TaskFilter::Cd, 4, None).unwrap();
        assert_eq!(b.targets.available, [vec![0.0], vec![0.0], vec![1.0]]);
    }

    #[test]
    fn crop_offsets() {
        let t = Tensor::<f32>::from_fn(Shape::new(1, 1, 6, 6), |[_, _, y, x]| (y * 6 + x) as f32);
        let geo = Geometry {
            hflip: false,
            vflip: false,
            top: 1,
            left: 2,
            size: 4,
        };
        let c = geo.apply(&t);
        assert_eq!(c.at(0, 0, 0, 0), 8.0);
        assert_eq!(c.at(0, 0, 3, 3), 29.0);
    }
}
