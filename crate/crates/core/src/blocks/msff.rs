use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::Conv2d;
use crate::param::{ParamBuilder, ParamId, ParamStore};
use crate::tensor::Element;

/// Kernel sizes of the multi-scale paths (the first path is a bare 1x1).
pub const MSFF_KERNELS: [usize; 4] = [1, 3, 5, 7];

#[derive(Clone, Debug)]
struct Path {
    reduce: Option<Conv2d>,
    conv: Conv2d,
    expand: Option<Conv2d>,
}

#[derive(Clone, Debug)]
pub struct Msff {
    pub channels: usize,
    paths: Vec<Path>,
    fuse: Conv2d,
}

impl Msff {
    pub fn new<T: Element>(
        b: &mut ParamBuilder<'_, T>,
        name: &str,
        channels: usize,
    ) -> Result<Self> {
        if channels == 0 || !channels.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "multi-scale block needs channels divisible by 4, got {channels}"
            )));
        }
        let q = channels / 4;
        b.scope(name, |b| {
            let mut paths = Vec::with_capacity(4);
            for k in MSFF_KERNELS {
                let path = b.scope(&format!("path{k}"), |b| -> Result<Path> {
                    if k == 1 {
                        return Ok(Path {
                            reduce: None,
                            conv: Conv2d::new(b, "conv", channels, q, 1, 1, true)?,
                            expand: None,
                        });
                    }
                    Ok(Path {
                        reduce: Some(Conv2d::new(b, "reduce", channels, q, 1, 1, true)?),
                        conv: Conv2d::new(b, "conv", q, q, k, 1, true)?,
                        expand: Some(Conv2d::new(b, "expand", q, q, 1, 1, true)?),
                    })
                })?;
                paths.push(path);
            }
            let fuse = Conv2d::new(b, "fuse", channels, channels, 1, 1, true)?;
            Ok(Msff {
                channels,
                paths,
                fuse,
            })
        })
    }

    /// Kernel size of every convolution, path by path.
    pub fn kernel_sizes(&self) -> Vec<Vec<usize>> {
        self.paths
            .iter()
            .map(|p| {
                [p.reduce.as_ref(), Some(&p.conv), p.expand.as_ref()]
                    .into_iter()
                    .flatten()
                    .map(|c| c.k)
                    .collect()
            })
            .collect()
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut out = Vec::new();
        for p in &self.paths {
            for c in [p.reduce.as_ref(), Some(&p.conv), p.expand.as_ref()]
                .into_iter()
                .flatten()
            {
                out.extend(c.params());
            }
        }
        out.extend(self.fuse.params());
        out
    }

    pub fn forward<T: Element>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let c = tape.shape(x).c;
        if c != self.channels {
            return Err(Error::Shape(format!(
                "multi-scale block built for {} channels, input has {c}",
                self.channels
            )));
        }
        let mut outs = Vec::with_capacity(self.paths.len());
        for path in &self.paths {
            let y = match (&path.reduce, &path.expand) {
                (Some(reduce), Some(expand)) => {
                    let r = reduce.forward(tape, store, x)?;
                    let r = tape.silu(r);
                    let k = path.conv.forward(tape, store, r)?;
                    let k = tape.silu(k);
                    expand.forward(tape, store, k)?
                }
                _ => path.conv.forward(tape, store, x)?,
            };
            outs.push(y);
        }
        let cat = tape.concat_c(&outs)?;
        self.fuse.forward(tape, store, cat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::{Shape, Tensor};

    #[test]
    fn kernel_set_and_shape() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = Rng::new(0);
        let block = Msff::new(&mut ParamBuilder::new(&mut store, &mut rng), "msff", 16).unwrap();
        let ks: Vec<usize> = block
            .kernel_sizes()
            .iter()
            .map(|p| *p.iter().max().unwrap())
            .collect();
        assert_eq!(ks, MSFF_KERNELS);
        assert_eq!(block.kernel_sizes()[2], vec![1, 5, 1]);
        let mut tape = Tape::new();
        let x = tape.constant(rng.normal_tensor(Shape::new(2, 16, 32, 32), 1.0));
        let y = block.forward(&mut tape, &store, x).unwrap();
        assert_eq!(tape.shape(y), Shape::new(2, 16, 32, 32));
    }

    #[test]
    fn rejects_channels_not_divisible_by_four() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = Rng::new(0);
        assert!(Msff::new(&mut ParamBuilder::new(&mut store, &mut rng), "m", 6).is_err());
        let block = Msff::new(&mut ParamBuilder::new(&mut store, &mut rng), "m", 8).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(Shape::new(1, 4, 4, 4)));
        assert!(block.forward(&mut tape, &store, x).is_err());
    }
}
