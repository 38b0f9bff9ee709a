//! 2-D convolution as an explicit window gather followed by a GEMM.

use crate::autodiff::{Ctx, Tape, Var};
use crate::error::{Error, Result};
use crate::param::{ParamBuilder, ParamId, ParamStore};
use crate::tensor::{Element, Shape, Tensor};

#[derive(Clone, Copy, Debug)]
struct Geometry {
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new(input: Shape, k: usize, stride: usize, pad: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Config(
                "convolution stride must be at least 1".into(),
            ));
        }
        let (ph, pw) = (input.h + 2 * pad, input.w + 2 * pad);
        if k > ph || k > pw {
            return Err(Error::Shape(format!(
                "kernel {k}x{k} larger than padded input {ph}x{pw}"
            )));
        }
        Ok(Geometry {
            c_in: input.c,
            h: input.h,
            w: input.w,
            k,
            stride,
            pad,
            oh: (ph - k) / stride + 1,
            ow: (pw - k) / stride + 1,
        })
    }

    fn rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Input coordinate for output position `o` and kernel tap `t`, if inside.
    #[inline]
    fn src(&self, o: usize, t: usize, len: usize) -> Option<usize> {
        let p = (o * self.stride + t) as isize - self.pad as isize;
        (p >= 0 && (p as usize) < len).then_some(p as usize)
    }

    /// True when the column matrix is the input itself.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Output columns `ox` whose tap `kx` lands inside a row of length `len`.
    fn valid_range(&self, kx: usize, len: usize) -> std::ops::Range<usize> {
        let first = (self.pad.saturating_sub(kx)).div_ceil(self.stride);
        let last = (len + self.pad)
            .saturating_sub(kx)
            .div_ceil(self.stride)
            .min(self.ow);
        first.min(last)..last
    }

    /// Gather one image `(c_in, h, w)` into a `(c_in*k*k, oh*ow)` matrix.
    fn im2col<T: Element>(&self, img: &[T], cols: &mut Vec<T>) {
        cols.clear();
        for c in 0..self.c_in {
            let plane = &img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let inside = self.valid_range(kx, self.w);
                    for oy in 0..self.oh {
                        let Some(iy) = self.src(oy, ky, self.h) else {
                            cols.resize(cols.len() + self.ow, T::zero());
                            continue;
                        };
                        let src_row = &plane[iy * self.w..(iy + 1) * self.w];
                        cols.resize(cols.len() + inside.start, T::zero());
                        let first = inside.start * self.stride + kx - self.pad;
                        if self.stride == 1 {
                            cols.extend_from_slice(&src_row[first..first + inside.len()]);
                        } else {
                            cols.extend(
                                src_row[first..]
                                    .iter()
                                    .step_by(self.stride)
                                    .take(inside.len()),
                            );
                        }
                        cols.resize(cols.len() + self.ow - inside.end, T::zero());
                    }
                }
            }
        }
    }

    /// Scatter-add a column matrix back onto one image.
    fn col2im<T: Element>(&self, cols: &[T], img: &mut [T]) {
        let n_cols = self.cols();
        for c in 0..self.c_in {
            let plane = &mut img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let src = &cols[row * n_cols..(row + 1) * n_cols];
                    for oy in 0..self.oh {
                        let Some(iy) = self.src(oy, ky, self.h) else {
                            continue;
                        };
                        for ox in 0..self.ow {
                            if let Some(ix) = self.src(ox, kx, self.w) {
                                let i = iy * self.w + ix;
                                plane[i] = plane[i] + src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<T: Element> Tape<T> {
    /// Zero-padded cross-correlation. `weight` is `(c_out, c_in, k, k)`, `bias` is `(1, c_out, 1, 1)`.
    pub fn conv2d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(weight));
        if ws.h != ws.w {
            return Err(Error::Shape(format!("non-square kernel {ws}")));
        }
        if ws.c != xs.c {
            return Err(Error::Shape(format!(
                "conv weight {ws} expects {} input channels, input is {xs}",
                ws.c
            )));
        }
        let c_out = ws.n;
        if let Some(b) = bias {
            let bs = self.shape(b);
            if bs != Shape::new(1, c_out, 1, 1) {
                return Err(Error::Shape(format!(
                    "conv bias {bs} for {c_out} output channels"
                )));
            }
        }
        let geo = Geometry::new(xs, ws.h, stride, pad)?;
        let out_shape = Shape::new(xs.n, c_out, geo.oh, geo.ow);
        let mut out = Tensor::zeros(out_shape);
        {
            let (rows, ncol) = (geo.rows(), geo.cols());
            let mut cols = Vec::with_capacity(if geo.is_pointwise() { 0 } else { rows * ncol });
            let xv = self.value(x).data();
            let wv = self.value(weight).data();
            let in_len = xs.c * xs.plane();
            let out_len = c_out * ncol;
            for (n, dst) in out.data_mut().chunks_exact_mut(out_len).enumerate() {
                let img = &xv[n * in_len..(n + 1) * in_len];
                let cols: &[T] = if geo.is_pointwise() {
                    img
                } else {
                    geo.im2col(img, &mut cols);
                    &cols
                };
                T::gemm(
                    c_out,
                    rows,
                    ncol,
                    T::one(),
                    wv,
                    rows as isize,
                    1,
                    cols,
                    ncol as isize,
                    1,
                    T::zero(),
                    dst,
                    ncol as isize,
                    1,
                );
            }
            if let Some(b) = bias {
                let bv = self.value(b).data();
                for img in out.data_mut().chunks_exact_mut(out_len) {
                    for (plane, &bias) in img.chunks_exact_mut(ncol).zip(bv) {
                        plane.iter_mut().for_each(|v| *v = *v + bias);
                    }
                }
            }
        }
        let has_bias = bias.is_some();
        let back = Box::new(move |ctx: &Ctx<'_, T>, g: &Tensor<T>| {
            let (xv, wv) = (ctx.input(0).data(), ctx.input(1).data());
            let (rows, ncol) = (geo.rows(), geo.cols());
            let in_len = geo.c_in * geo.h * geo.w;
            let out_len = c_out * ncol;
            let mut cols = Vec::with_capacity(rows * ncol);
            let mut gx = ctx.needs(0).then(|| Tensor::zeros(ctx.input(0).shape()));
            let mut gw = ctx.needs(1).then(|| Tensor::zeros(ctx.input(1).shape()));
            for (n, gy) in g.data().chunks_exact(out_len).enumerate() {
                let img = &xv[n * in_len..(n + 1) * in_len];
                if let Some(gw) = gw.as_mut() {
                    let cols: &[T] = if geo.is_pointwise() {
                        img
                    } else {
                        geo.im2col(img, &mut cols);
                        &cols
                    };
                    // dW += dY * cols^T
                    T::gemm(
                        c_out,
                        ncol,
                        rows,
                        T::one(),
                        gy,
                        ncol as isize,
                        1,
                        cols,
                        1,
                        ncol as isize,
                        T::one(),
                        gw.data_mut(),
                        rows as isize,
                        1,
                    );
                }
                if let Some(gx) = gx.as_mut() {
                    let dst = &mut gx.data_mut()[n * in_len..(n + 1) * in_len];
                    // dcols = W^T * dY, written straight into dX when the layout allows.
                    if geo.is_pointwise() {
                        T::gemm(
                            rows,
                            c_out,
                            ncol,
                            T::one(),
                            wv,
                            1,
                            rows as isize,
                            gy,
                            ncol as isize,
                            1,
                            T::zero(),
                            dst,
                            ncol as isize,
                            1,
                        );
                    } else {
                        cols.resize(rows * ncol, T::zero());
                        T::gemm(
                            rows,
                            c_out,
                            ncol,
                            T::one(),
                            wv,
                            1,
                            rows as isize,
                            gy,
                            ncol as isize,
                            1,
                            T::zero(),
                            &mut cols,
                            ncol as isize,
                            1,
                        );
                        geo.col2im(&cols, dst);
                    }
                }
            }
            let mut grads = vec![gx, gw];
            if has_bias {
                let gb = ctx.needs(2).then(|| {
                    let mut d = vec![T::zero(); c_out];
                    for img in g.data().chunks_exact(out_len) {
                        for (acc, plane) in d.iter_mut().zip(img.chunks_exact(ncol)) {
                            *acc = *acc + plane.iter().copied().sum();
                        }
                    }
                    Tensor::from_vec(Shape::new(1, c_out, 1, 1), d).expect("bias shape")
                });
                grads.push(gb);
            }
            grads
        });
        let inputs: Vec<Var> = [Some(x), Some(weight), bias]
            .into_iter()
            .flatten()
            .collect();
        Ok(self.push_op(out, &inputs, back))
    }
}

/// Convolution layer parameters.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// Same-padded layer (`pad = (k - 1) / 2`) with uniform `±1/sqrt(fan_in)` init.
    pub fn new<T: Element>(
        b: &mut ParamBuilder<'_, T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        bias: bool,
    ) -> Result<Self> {
        let bound = 1.0 / ((c_in * k * k) as f64).sqrt();
        Self::with_bound(b, name, c_in, c_out, k, stride, bias, bound)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_bound<T: Element>(
        b: &mut ParamBuilder<'_, T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        bias: bool,
        bound: f64,
    ) -> Result<Self> {
        if k.is_multiple_of(2) {
            return Err(Error::Config(format!("kernel size {k} must be odd")));
        }
        b.scope(name, |b| {
            let weight = b.uniform("weight", Shape::new(c_out, c_in, k, k), bound)?;
            let bias = if bias {
                Some(b.uniform(
                    "bias",
                    Shape::new(1, c_out, 1, 1),
                    1.0 / ((c_in * k * k) as f64).sqrt(),
                )?)
            } else {
                None
            };
            Ok(Conv2d {
                weight,
                bias,
                c_in,
                c_out,
                k,
                stride,
                pad: (k - 1) / 2,
            })
        })
    }

    pub fn forward<T: Element>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|id| tape.param(store, id));
        tape.conv2d(x, w, b, self.stride, self.pad)
    }

    pub fn params(&self) -> Vec<ParamId> {
        [Some(self.weight), self.bias]
            .into_iter()
            .flatten()
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn run(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.constant(w.clone());
        let y = tape.conv2d(xv, wv, None, stride, pad).unwrap();
        tape.value(y).clone()
    }

    /// Direct nested-loop cross-correlation.
    fn reference(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let (xs, ws) = (x.shape(), w.shape());
        let oh = (xs.h + 2 * pad - ws.h) / stride + 1;
        let ow = (xs.w + 2 * pad - ws.w) / stride + 1;
        Tensor::from_fn(Shape::new(xs.n, ws.n, oh, ow), |[n, o, y, xo]| {
            let mut acc = 0.0;
            for c in 0..xs.c {
                for ky in 0..ws.h {
                    for kx in 0..ws.w {
                        let iy = (y * stride + ky) as isize - pad as isize;
                        let ix = (xo * stride + kx) as isize - pad as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < xs.h && (ix as usize) < xs.w {
                            acc += x.at(n, c, iy as usize, ix as usize) * w.at(o, c, ky, kx);
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn identity_1x1() {
        let x = Rng::new(1).normal_tensor::<f64>(Shape::new(2, 4, 5, 5), 1.0);
        let w = Tensor::from_fn(
            Shape::new(4, 4, 1, 1),
            |[o, i, _, _]| if o == i { 1.0 } else { 0.0 },
        );
        assert_eq!(run(&x, &w, 1, 0), x);
    }

    #[test]
    fn ones_kernel_counts_cells() {
        let x = Tensor::ones(Shape::new(1, 1, 3, 3));
        let w = Tensor::ones(Shape::new(1, 1, 3, 3));
        let y = run(&x, &w, 1, 1);
        assert_eq!(y.at(0, 0, 1, 1), 9.0);
        for (h, w) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert_eq!(y.at(0, 0, h, w), 4.0);
        }
        assert_eq!(y.at(0, 0, 0, 1), 6.0);
    }

    #[test]
    fn matches_direct_loops() {
        let mut rng = Rng::new(9);
        for &(k, stride, pad) in &[
            (1, 1, 0),
            (3, 1, 1),
            (3, 2, 1),
            (5, 1, 2),
            (7, 1, 3),
            (3, 2, 0),
            (1, 2, 0),
            (5, 2, 2),
            (3, 3, 1),
            (5, 3, 4),
        ] {
            let x = rng.normal_tensor::<f64>(Shape::new(2, 3, 8, 6), 1.0);
            let w = rng.normal_tensor::<f64>(Shape::new(4, 3, k, k), 1.0);
            let a = run(&x, &w, stride, pad);
            let b = reference(&x, &w, stride, pad);
            assert_eq!(a.shape(), b.shape());
            for (p, q) in a.data().iter().zip(b.data()) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn homogeneous_in_input() {
        let mut rng = Rng::new(5);
        let x = rng.normal_tensor::<f64>(Shape::new(1, 2, 6, 6), 1.0);
        let w = rng.normal_tensor::<f64>(Shape::new(3, 2, 3, 3), 1.0);
        let alpha = rng.uniform_in(-3.0, 3.0);
        let a = run(&x.map(|v| v * alpha), &w, 1, 1);
        let b = run(&x, &w, 1, 1).map(|v| v * alpha);
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::ones(Shape::new(1, 3, 4, 4)));
        let w = tape.constant(Tensor::ones(Shape::new(2, 4, 3, 3)));
        assert!(tape.conv2d(x, w, None, 1, 1).is_err());
        let big = tape.constant(Tensor::ones(Shape::new(2, 3, 7, 7)));
        assert!(tape.conv2d(x, big, None, 1, 1).is_err());
    }
}
