//! Differentiable elementwise, reduction and reshaping ops.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{
    self, bilinear_taps, binary, check_broadcast, sigmoid, BinaryOp, ChannelStat, Element, Interp,
    Shape, Tensor,
};

/// Logit bound equivalent to clamping probabilities to `[1e-7, 1 - 1e-7]`.
pub const BCE_LOGIT_BOUND: f64 = 16.118_095_650_958_32;

/// Sum a channel-broadcast gradient back down to one channel.
fn reduce_channels<T: Element>(g: &Tensor<T>) -> Tensor<T> {
    let s = g.shape();
    let plane = s.plane();
    let mut out = vec![T::zero(); s.n * plane];
    for n in 0..s.n {
        let dst = &mut out[n * plane..(n + 1) * plane];
        for c in 0..s.c {
            let base = (n * s.c + c) * plane;
            for (d, &v) in dst.iter_mut().zip(&g.data()[base..base + plane]) {
                *d = *d + v;
            }
        }
    }
    Tensor::from_vec(s.with_c(1), out).expect("reduced shape")
}

fn zip_map<T: Element>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_vec(a.shape(), data).expect("same shape")
}

impl<T: Element> Tape<T> {
    fn binary_op(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let value = binary(op, self.value(a), self.value(b))?;
        let broadcast = check_broadcast(self.shape(a), self.shape(b))?;
        let back = Box::new(move |ctx: &crate::autodiff::Ctx<'_, T>, g: &Tensor<T>| {
            let (av, bv) = (ctx.input(0), ctx.input(1));
            let (ga, gb_full) = match op {
                BinaryOp::Add => (
                    ctx.needs(0).then(|| g.clone()),
                    ctx.needs(1).then(|| g.clone()),
                ),
                BinaryOp::Sub => (
                    ctx.needs(0).then(|| g.clone()),
                    ctx.needs(1).then(|| g.map(|v| -v)),
                ),
                BinaryOp::Mul => (
                    ctx.needs(0)
                        .then(|| binary(BinaryOp::Mul, g, bv).expect("checked")),
                    ctx.needs(1).then(|| zip_map(g, av, |gv, x| gv * x)),
                ),
                BinaryOp::Div => {
                    let ga = ctx
                        .needs(0)
                        .then(|| binary(BinaryOp::Div, g, bv).expect("checked"));
                    // d(a/b)/db = -out / b
                    let gb = ctx.needs(1).then(|| {
                        let q = binary(BinaryOp::Div, ctx.output(), bv).expect("checked");
                        zip_map(g, &q, |gv, qv| -gv * qv)
                    });
                    (ga, gb)
                }
            };
            let gb = gb_full.map(|t| if broadcast { reduce_channels(&t) } else { t });
            vec![ga, gb]
        });
        Ok(self.push_op(value, &[a, b], back))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_op(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_op(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_op(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_op(BinaryOp::Div, a, b)
    }

    /// Elementwise map with derivative `df(x, y)` where `y = f(x)`.
    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Var {
        let value = self.value(x).map(f);
        let back = Box::new(move |ctx: &crate::autodiff::Ctx<'_, T>, g: &Tensor<T>| {
            let (xv, yv) = (ctx.input(0).data(), ctx.output().data());
            let data = g
                .data()
                .iter()
                .zip(xv.iter().zip(yv))
                .map(|(&gv, (&xe, &ye))| gv * df(xe, ye))
                .collect();
            vec![Some(Tensor::from_vec(g.shape(), data).expect("same shape"))]
        });
        self.push_op(value, &[x], back)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        self.unary(x, move |v| v * s, move |_, _| s)
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Var {
        self.unary(x, move |v| v + s, |_, _| T::one())
    }

    /// `|x|`, with zero subgradient at zero.
    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, T::abs, |xv, _| {
            if xv > T::zero() {
                T::one()
            } else if xv < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, |_, y| y * (T::one() - y))
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| v * sigmoid(v),
            |xv, _| {
                let s = sigmoid(xv);
                s * (T::one() + xv * (T::one() - s))
            },
        )
    }

    /// `max(x, floor)`; the gradient passes only where `x > floor`.
    pub fn clamp_min(&mut self, x: Var, floor: T) -> Var {
        self.unary(
            x,
            move |v| v.max(floor),
            move |xv, _| if xv > floor { T::one() } else { T::zero() },
        )
    }

    /// `min(x, ceiling)`; the gradient passes only where `x < ceiling`.
    pub fn clamp_max(&mut self, x: Var, ceiling: T) -> Var {
        self.unary(
            x,
            move |v| v.min(ceiling),
            move |xv, _| if xv < ceiling { T::one() } else { T::zero() },
        )
    }

    /// Smooth upper bound `ceiling - softplus(ceiling - x)`: below the
    /// ceiling it tracks `x` to within `ln(1 + e^(x - ceiling))`, and it never
    /// reaches the ceiling. The gradient is `sigmoid(ceiling - x)`.
    pub fn soft_ceiling(&mut self, x: Var, ceiling: T) -> Var {
        self.unary(
            x,
            move |v| {
                let z = ceiling - v;
                if z > T::zero() {
                    v - (-z).exp().ln_1p()
                } else {
                    ceiling - z.exp().ln_1p()
                }
            },
            move |xv, _| sigmoid(ceiling - xv),
        )
    }

    pub fn channel_mean(&mut self, x: Var) -> Var {
        let value = tensor::channel_stats(self.value(x), ChannelStat::Mean);
        let back = Box::new(|ctx: &crate::autodiff::Ctx<'_, T>, g: &Tensor<T>| {
            let s = ctx.input(0).shape();
            let inv_c = T::one() / T::from_f64(s.c as f64);
            let gs = g.map(|v| v * inv_c);
            let ones = Tensor::ones(s);
            vec![Some(binary(BinaryOp::Mul, &ones, &gs).expect("broadcast"))]
        });
        self.push_op(value, &[x], back)
    }

    /// Population variance across channels.
    pub fn channel_var(&mut self, x: Var) -> Var {
        let value = tensor::channel_stats(self.value(x), ChannelStat::Variance);
        let back = Box::new(|ctx: &crate::autodiff::Ctx<'_, T>, g: &Tensor<T>| {
            let xv = ctx.input(0);
            let s = xv.shape();
            let mean = tensor::channel_stats(xv, ChannelStat::Mean);
            let centered = binary(BinaryOp::Sub, xv, &mean).expect("broadcast");
            let k = T::from_f64(2.0 / s.c as f64);
            let gs = g.map(|v| v * k);
            vec![Some(
                binary(BinaryOp::Mul, &centered, &gs).expect("broadcast"),
            )]
        });
        self.push_op(value, &[x], back)
    }

    pub fn concat_c(&mut self, parts: &[Var]) -> Result<Var> {
        let value = {
            let refs: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
            tensor::concat_c(&refs)?
        };
        let sizes: Vec<usize> = parts.iter().map(|&p| self.shape(p).c).collect();
        let back = Box::new(move |_: &crate::autodiff::Ctx<'_, T>, g: &Tensor<T>| {
            tensor::split_c(g, &sizes)
                .expect("sizes match")
                .into_iter()
                .map(Some)
                .collect()
        });
        Ok(self.push_op(value, parts, back))
    }

    pub fn slice_c(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let value = tensor::slice_c(self.value(x), start, len)?;
        let back = Box::new(move |ctx: &crate::autodiff::Ctx<'_, T>, g: &Tensor<T>| {
            let s = ctx.input(0).shape();
            let plane = s.plane();
            let mut out = Tensor::zeros(s);
            let data = out.data_mut();
            for n in 0..s.n {
                let dst = (n * s.c + start) * plane;
                let src = n * len * plane;
                data[dst..dst + len * plane].copy_from_slice(&g.data()[src..src + len * plane]);
            }
            vec![Some(out)]
        });
        Ok(self.push_op(value, &[x], back))
    }

    pub fn split_c(&mut self, x: Var, sizes: &[usize]) -> Result<Vec<Var>> {
        let total: usize = sizes.iter().sum();
        let c = self.shape(x).c;
        if total != c {
            return Err(Error::Shape(format!(
                "split sizes {sizes:?} sum to {total}, tensor has {c} channels"
            )));
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &len in sizes {
            out.push(self.slice_c(x, start, len)?);
            start += len;
        }
        Ok(out)
    }

    pub fn upsample(&mut self, x: Var, factor: usize, mode: Interp) -> Result<Var> {
        let value = tensor::upsample(self.value(x), factor, mode)?;
        let back = Box::new(move |ctx: &crate::autodiff::Ctx<'_, T>, g: &Tensor<T>| {
            vec![Some(upsample_backward(
                ctx.input(0).shape(),
                g,
                factor,
                mode,
            ))]
        });
        Ok(self.push_op(value, &[x], back))
    }

    /// `(n, c, h, w)` to `n*h*w` tokens of width `c`, row-major over `(n, h, w)`.
    pub fn to_tokens(&mut self, x: Var) -> Var {
        let value = to_tokens(self.value(x));
        let back = Box::new(|ctx: &crate::autodiff::Ctx<'_, T>, g: &Tensor<T>| {
            vec![Some(from_tokens(g, ctx.input(0).shape()))]
        });
        self.push_op(value, &[x], back)
    }

    /// Concatenate token tensors group by group: each part holds `groups`
    /// equal-length runs of rows, and run `i` of every part is emitted before
    /// run `i + 1` of any part.
    pub fn concat_groups(&mut self, parts: &[Var], groups: usize) -> Result<Var> {
        let width = self.shape(parts[0]).c;
        let mut runs = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.c != width || s.h != 1 || s.w != 1 || !s.n.is_multiple_of(groups) {
                return Err(Error::Shape(format!(
                    "token part {s} incompatible with width {width} and {groups} groups"
                )));
            }
            runs.push(s.n / groups);
        }
        let total: usize = runs.iter().sum::<usize>() * groups;
        let mut data = Vec::with_capacity(total * width);
        for gi in 0..groups {
            for (&p, &run) in parts.iter().zip(&runs) {
                let src = self.value(p).data();
                data.extend_from_slice(&src[gi * run * width..(gi + 1) * run * width]);
            }
        }
        let value = Tensor::from_vec(Shape::tokens(total, width), data)?;
        let back = Box::new(move |_: &crate::autodiff::Ctx<'_, T>, g: &Tensor<T>| {
            let mut outs: Vec<Vec<T>> = runs
                .iter()
                .map(|r| Vec::with_capacity(r * groups * width))
                .collect();
            let mut offset = 0;
            for _ in 0..groups {
                for (out, &run) in outs.iter_mut().zip(&runs) {
                    out.extend_from_slice(&g.data()[offset..offset + run * width]);
                    offset += run * width;
                }
            }
            outs.into_iter()
                .zip(&runs)
                .map(|(d, &run)| {
                    Some(Tensor::from_vec(Shape::tokens(run * groups, width), d).expect("shape"))
                })
                .collect()
        });
        Ok(self.push_op(value, parts, back))
    }

    /// Rows `idx` of a token tensor, with scatter-add backward.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let s = self.shape(x);
        let width = s.c * s.plane();
        if let Some(&bad) = idx.iter().find(|&&i| i >= s.n) {
            return Err(Error::Shape(format!("row {bad} out of range for {s}")));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(idx.len() * width);
        for &i in idx {
            data.extend_from_slice(&src[i * width..(i + 1) * width]);
        }
        let value = Tensor::from_vec(Shape::new(idx.len(), s.c, s.h, s.w), data)?;
        let idx = idx.to_vec();
        let back = Box::new(move |_: &crate::autodiff::Ctx<'_, T>, g: &Tensor<T>| {
            let mut out = Tensor::zeros(s);
            let od = out.data_mut();
            for (r, &i) in idx.iter().enumerate() {
                for k in 0..width {
                    od[i * width + k] = od[i * width + k] + g.data()[r * width + k];
                }
            }
            vec![Some(out)]
        });
        Ok(self.push_op(value, &[x], back))
    }

    /// Per-pixel dot product of `f: (n, c, h, w)` with `e: (n, c, 1, 1)`; output `(n, 1, h, w)`.
    pub fn channel_dot(&mut self, f: Var, e: Var) -> Result<Var> {
        let (fs, es) = (self.shape(f), self.shape(e));
        if es != Shape::new(fs.n, fs.c, 1, 1) {
            return Err(Error::Shape(format!(
                "channel_dot of {fs} with embedding {es}"
            )));
        }
        let plane = fs.plane();
        let (fv, ev) = (self.value(f).data(), self.value(e).data());
        let mut out = vec![T::zero(); fs.n * plane];
        for n in 0..fs.n {
            let dst = &mut out[n * plane..(n + 1) * plane];
            for c in 0..fs.c {
                let wgt = ev[n * fs.c + c];
                let base = (n * fs.c + c) * plane;
                for (d, &v) in dst.iter_mut().zip(&fv[base..base + plane]) {
                    *d = *d + v * wgt;
                }
            }
        }
        let value = Tensor::from_vec(fs.with_c(1), out)?;
        let back = Box::new(move |ctx: &crate::autodiff::Ctx<'_, T>, g: &Tensor<T>| {
            let (fv, ev) = (ctx.input(0).data(), ctx.input(1).data());
            let gf = ctx.needs(0).then(|| {
                Tensor::from_fn(fs, |[n, c, h, w]| {
                    g.data()[n * plane + h * fs.w + w] * ev[n * fs.c + c]
                })
            });
            let ge = ctx.needs(1).then(|| {
                let mut d = vec![T::zero(); fs.n * fs.c];
                for n in 0..fs.n {
                    let gp = &g.data()[n * plane..(n + 1) * plane];
                    for c in 0..fs.c {
                        let base = (n * fs.c + c) * plane;
                        d[n * fs.c + c] = fv[base..base + plane]
                            .iter()
                            .zip(gp)
                            .map(|(&a, &b)| a * b)
                            .sum();
                    }
                }
                Tensor::from_vec(es, d).expect("shape")
            });
            vec![gf, ge]
        });
        Ok(self.push_op(value, &[f, e], back))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let back = Box::new(|ctx: &crate::autodiff::Ctx<'_, T>, g: &Tensor<T>| {
            vec![Some(Tensor::full(ctx.input(0).shape(), g.item()))]
        });
        self.push_op(value, &[x], back)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = T::from_f64(self.shape(x).numel() as f64);
        let s = self.sum(x);
        self.scale(s, T::one() / n)
    }

    /// Mean binary cross-entropy from logits over the pixels of the samples
    /// whose weight is non-zero, normalised by the total weight times the
    /// pixel count. Logits are clamped to [`BCE_LOGIT_BOUND`]. Returns a
    /// constant zero when every weight is zero.
    pub fn bce_with_logits(
        &mut self,
        logits: Var,
        target: &Tensor<T>,
        weights: &[T],
    ) -> Result<Var> {
        let s = self.shape(logits);
        if target.shape() != s {
            return Err(Error::Shape(format!(
                "logits {s} vs labels {}",
                target.shape()
            )));
        }
        if weights.len() != s.n {
            return Err(Error::Shape(format!(
                "{} sample weights for batch {}",
                weights.len(),
                s.n
            )));
        }
        if let Some(bad) = target
            .data()
            .iter()
            .find(|&&y| y != T::zero() && y != T::one())
        {
            return Err(Error::Label(format!("label value {bad} is not 0 or 1")));
        }
        let total: T = weights.iter().copied().sum();
        if total <= T::zero() {
            return Ok(self.constant(Tensor::scalar(T::zero())));
        }
        let per_sample = s.c * s.plane();
        let norm = T::one() / (total * T::from_f64(per_sample as f64));
        let bound = T::from_f64(BCE_LOGIT_BOUND);
        let z = self.value(logits).data();
        let mut acc = T::zero();
        for (n, &wn) in weights.iter().enumerate() {
            if wn == T::zero() {
                continue;
            }
            let range = n * per_sample..(n + 1) * per_sample;
            let sample: T = z[range.clone()]
                .iter()
                .zip(&target.data()[range])
                .map(|(&zv, &y)| {
                    let zc = zv.max(-bound).min(bound);
                    zc.max(T::zero()) - zc * y + (T::one() + (-zc.abs()).exp()).ln()
                })
                .sum();
            acc = acc + wn * sample;
        }
        let value = Tensor::scalar(acc * norm);
        let target = target.clone();
        let weights = weights.to_vec();
        let back = Box::new(move |ctx: &crate::autodiff::Ctx<'_, T>, g: &Tensor<T>| {
            let z = ctx.input(0).data();
            let scale = g.item() * norm;
            let data = z
                .iter()
                .zip(target.data())
                .enumerate()
                .map(|(i, (&zv, &y))| {
                    let wn = weights[i / per_sample];
                    if wn == T::zero() || zv.abs() > bound {
                        T::zero()
                    } else {
                        scale * wn * (sigmoid(zv) - y)
                    }
                })
                .collect();
            vec![Some(
                Tensor::from_vec(ctx.input(0).shape(), data).expect("shape"),
            )]
        });
        Ok(self.push_op(value, &[logits], back))
    }
}

pub fn to_tokens<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let plane = s.plane();
    let mut data = vec![T::zero(); s.numel()];
    for n in 0..s.n {
        for c in 0..s.c {
            let src = &x.data()[(n * s.c + c) * plane..(n * s.c + c + 1) * plane];
            for (p, &v) in src.iter().enumerate() {
                data[(n * plane + p) * s.c + c] = v;
            }
        }
    }
    Tensor::from_vec(Shape::tokens(s.n * plane, s.c), data).expect("token shape")
}

pub fn from_tokens<T: Element>(tokens: &Tensor<T>, shape: Shape) -> Tensor<T> {
    let plane = shape.plane();
    let mut data = vec![T::zero(); shape.numel()];
    for n in 0..shape.n {
        for c in 0..shape.c {
            let dst = &mut data[(n * shape.c + c) * plane..(n * shape.c + c + 1) * plane];
            for (p, d) in dst.iter_mut().enumerate() {
                *d = tokens.data()[(n * plane + p) * shape.c + c];
            }
        }
    }
    Tensor::from_vec(shape, data).expect("feature shape")
}

fn upsample_backward<T: Element>(
    in_shape: Shape,
    g: &Tensor<T>,
    factor: usize,
    mode: Interp,
) -> Tensor<T> {
    if factor == 1 {
        return g.clone();
    }
    let s = in_shape;
    let (oh, ow) = (s.h * factor, s.w * factor);
    let mut out = Tensor::zeros(s);
    let od = out.data_mut();
    let planes = od
        .chunks_exact_mut(s.plane())
        .zip(g.data().chunks_exact(oh * ow));
    match mode {
        Interp::Nearest => {
            for (dst, src) in planes {
                for y in 0..oh {
                    for x in 0..ow {
                        let i = (y / factor) * s.w + x / factor;
                        dst[i] = dst[i] + src[y * ow + x];
                    }
                }
            }
        }
        Interp::Bilinear => {
            let ty = bilinear_taps::<T>(oh, factor, s.h);
            let tx = bilinear_taps::<T>(ow, factor, s.w);
            for (dst, src) in planes {
                for (y, yt) in ty.iter().enumerate() {
                    for (x, xt) in tx.iter().enumerate() {
                        let gv = src[y * ow + x];
                        let top = gv * (T::one() - yt.frac);
                        let bot = gv * yt.frac;
                        let one_m = T::one() - xt.frac;
                        for (row, part) in [(yt.lo, top), (yt.hi, bot)] {
                            let lo = row * s.w + xt.lo;
                            let hi = row * s.w + xt.hi;
                            dst[lo] = dst[lo] + part * one_m;
                            dst[hi] = dst[hi] + part * xt.frac;
                        }
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn tokens_roundtrip() {
        let x = Rng::new(1).normal_tensor::<f64>(Shape::new(2, 3, 4, 5), 1.0);
        let t = to_tokens(&x);
        assert_eq!(t.shape(), Shape::tokens(40, 3));
        assert_eq!(t.at(20 + 2 * 5 + 3, 1, 0, 0), x.at(1, 1, 2, 3));
        assert_eq!(from_tokens(&t, x.shape()), x);
    }

    #[test]
    fn soft_ceiling_matches_softplus_form() {
        let xs = [-30.0, 0.5, 10.0, 14.9, 15.0, 15.1, 40.0];
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor::from_vec(Shape::tokens(xs.len(), 1), xs.to_vec()).unwrap());
        let y = tape.soft_ceiling(x, 15.0);
        for (&xv, &yv) in xs.iter().zip(tape.value(y).data()) {
            let want = 15.0 - (1.0 + (15.0 - xv).exp()).ln();
            assert!((yv - want).abs() < 1e-12, "{xv}: {yv} vs {want}");
            assert!(yv < 15.0 && yv <= xv);
        }
        let mut t32 = Tape::<f32>::new();
        let big = t32.input(Tensor::from_vec(Shape::tokens(1, 1), vec![1e30f32]).unwrap());
        let c = t32.soft_ceiling(big, 15.0);
        let a = t32.sigmoid(c);
        assert!(t32.value(a).item() < 1.0);
    }

    #[test]
    fn bce_closed_forms() {
        let mut tape = Tape::<f64>::new();
        let s = Shape::new(2, 1, 4, 4);
        let label = Tensor::from_fn(s, |[_, _, h, w]| ((h + w) % 2) as f64);
        let zero = tape.input(Tensor::zeros(s));
        let l = tape.bce_with_logits(zero, &label, &[1.0, 1.0]).unwrap();
        assert!((tape.value(l).item() - std::f64::consts::LN_2).abs() < 1e-12);
        let perfect = tape.input(label.map(|y| if y > 0.5 { 20.0 } else { -20.0 }));
        let l = tape.bce_with_logits(perfect, &label, &[1.0, 1.0]).unwrap();
        assert!(tape.value(l).item() < 1e-6);
        let none = tape.bce_with_logits(perfect, &label, &[0.0, 0.0]).unwrap();
        assert_eq!(tape.value(none).item(), 0.0);
        let bad = label.map(|y| y * 0.5);
        assert!(tape.bce_with_logits(zero, &bad, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn bce_ignores_zero_weight_samples() {
        let s = Shape::new(2, 1, 3, 3);
        let z = Rng::new(4).normal_tensor::<f64>(s, 1.0);
        let label_a = Tensor::from_fn(s, |[n, _, h, _]| if n == 0 { (h % 2) as f64 } else { 1.0 });
        let label_b = Tensor::from_fn(s, |[n, _, h, _]| if n == 0 { (h % 2) as f64 } else { 0.0 });
        let mut tape = Tape::new();
        let zv = tape.input(z);
        let a = tape.bce_with_logits(zv, &label_a, &[1.0, 0.0]).unwrap();
        let b = tape.bce_with_logits(zv, &label_b, &[1.0, 0.0]).unwrap();
        assert_eq!(tape.value(a).item(), tape.value(b).item());
    }
}
