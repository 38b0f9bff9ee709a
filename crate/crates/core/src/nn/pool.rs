use serde::{Deserialize, Serialize};

use crate::autodiff::{Ctx, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Avg,
    Max,
}

fn out_len(len: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 || k == 0 {
        return Err(Error::Config(
            "pool kernel and stride must be at least 1".into(),
        ));
    }
    if k > len + 2 * pad {
        return Err(Error::Shape(format!(
            "pool window {k} larger than padded extent {}",
            len + 2 * pad
        )));
    }
    Ok((len + 2 * pad - k) / stride + 1)
}

/// Clipped input range `[lo, hi)` covered by window `o`.
fn window(o: usize, k: usize, stride: usize, pad: usize, len: usize) -> (usize, usize) {
    let start = (o * stride) as isize - pad as isize;
    let lo = start.max(0) as usize;
    let hi = ((start + k as isize).max(0) as usize).min(len);
    (lo, hi)
}

impl<T: Element> Tape<T> {
    /// Average pooling divides by the number of non-padding cells in each
    /// window. Max pooling routes the gradient to the first maximal cell in
    /// row-major window order.
    pub fn pool2d(
        &mut self,
        x: Var,
        mode: PoolMode,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let s = self.shape(x);
        let (oh, ow) = (out_len(s.h, k, stride, pad)?, out_len(s.w, k, stride, pad)?);
        let out_shape = Shape::new(s.n, s.c, oh, ow);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(out_shape.numel());
        let mut argmax = Vec::new();
        for (pi, plane) in xv.chunks_exact(s.plane()).enumerate() {
            for oy in 0..oh {
                let (y0, y1) = window(oy, k, stride, pad, s.h);
                for ox in 0..ow {
                    let (x0, x1) = window(ox, k, stride, pad, s.w);
                    if y0 >= y1 || x0 >= x1 {
                        return Err(Error::Shape(format!(
                            "pool window at ({oy}, {ox}) covers only padding"
                        )));
                    }
                    match mode {
                        PoolMode::Avg => {
                            let mut acc = T::zero();
                            for y in y0..y1 {
                                acc = acc + plane[y * s.w + x0..y * s.w + x1].iter().copied().sum();
                            }
                            out.push(acc / T::from_f64(((y1 - y0) * (x1 - x0)) as f64));
                        }
                        PoolMode::Max => {
                            let mut best = y0 * s.w + x0;
                            for y in y0..y1 {
                                for xi in x0..x1 {
                                    if plane[y * s.w + xi] > plane[best] {
                                        best = y * s.w + xi;
                                    }
                                }
                            }
                            out.push(plane[best]);
                            argmax.push(pi * s.plane() + best);
                        }
                    }
                }
            }
        }
        let value = Tensor::from_vec(out_shape, out)?;
        let back = Box::new(move |ctx: &Ctx<'_, T>, g: &Tensor<T>| {
            let mut gx = Tensor::zeros(ctx.input(0).shape());
            let gd = gx.data_mut();
            match mode {
                PoolMode::Max => {
                    for (&src, &gv) in argmax.iter().zip(g.data()) {
                        gd[src] = gd[src] + gv;
                    }
                }
                PoolMode::Avg => {
                    for (pi, gp) in g.data().chunks_exact(oh * ow).enumerate() {
                        let plane = &mut gd[pi * s.plane()..(pi + 1) * s.plane()];
                        for oy in 0..oh {
                            let (y0, y1) = window(oy, k, stride, pad, s.h);
                            for ox in 0..ow {
                                let (x0, x1) = window(ox, k, stride, pad, s.w);
                                let share =
                                    gp[oy * ow + ox] / T::from_f64(((y1 - y0) * (x1 - x0)) as f64);
                                for y in y0..y1 {
                                    for v in &mut plane[y * s.w + x0..y * s.w + x1] {
                                        *v = *v + share;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            vec![Some(gx)]
        });
        Ok(self.push_op(value, &[x], back))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(x: Tensor<f64>, mode: PoolMode, k: usize, s: usize, p: usize) -> Tensor<f64> {
        let mut tape = Tape::new();
        let v = tape.constant(x);
        let y = tape.pool2d(v, mode, k, s, p).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn avg_constant_with_padding() {
        let y = pool(
            Tensor::full(Shape::new(1, 1, 4, 4), 5.0),
            PoolMode::Avg,
            3,
            2,
            1,
        );
        assert_eq!(y.shape(), Shape::new(1, 1, 2, 2));
        assert!(y.data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn max_2x2() {
        let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(pool(x, PoolMode::Max, 2, 2, 0).data(), &[4.0]);
    }

    #[test]
    fn ssfc_configurations_halve_even_inputs() {
        for size in [2, 4, 8, 16] {
            let x = Tensor::full(Shape::new(2, 3, size, size), -1.5);
            let a = pool(x.clone(), PoolMode::Avg, 3, 2, 1);
            let m = pool(x, PoolMode::Max, 2, 2, 0);
            assert_eq!(a.shape(), Shape::new(2, 3, size / 2, size / 2));
            assert_eq!(a, m);
        }
    }

    #[test]
    fn max_backward_takes_first_tie() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor::full(Shape::new(1, 1, 2, 2), 1.0));
        let y = tape.pool2d(x, PoolMode::Max, 2, 2, 0).unwrap();
        let l = tape.sum(y);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
    }
}
