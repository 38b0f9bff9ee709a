//! Dense rank-4 NCHW tensors and the forward kernels shared by the autodiff ops.
//!
//! Every value in the crate is a `Tensor<T>` of shape `(n, c, h, w)`. Token
//! sequences and vectors are stored as degenerate tensors with `h = w = 1`.
//! Binary elementwise kernels accept either equal shapes or a right-hand side
//! with a single channel, which is broadcast across the channel axis.

use std::fmt;
use std::iter::Sum;

use num_traits::Float;

use crate::error::{Error, Result};

/// Storage dtype tag, also used as the on-disk dtype byte of checkpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

/// Scalar types a tensor can hold.
pub trait Element:
    Float + Default + Sum + Send + Sync + fmt::Debug + fmt::Display + 'static
{
    const DTYPE: DType;

    /// `c = alpha * op(a) * op(b) + beta * c` on row-major matrices given by strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    fn to_le_bytes_into(self, out: &mut Vec<u8>);
    fn from_le_slice(bytes: &[u8]) -> Self;
}

macro_rules! impl_element {
    ($t:ty, $dtype:expr, $gemm:path) => {
        impl Element for $t {
            const DTYPE: DType = $dtype;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                let span = |rows: usize, cols: usize, rs: isize, cs: isize| {
                    if rows == 0 || cols == 0 {
                        0
                    } else {
                        (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
                    }
                };
                assert!(
                    a.len() >= span(m, k, rsa, csa),
                    "gemm: lhs buffer too short"
                );
                assert!(
                    b.len() >= span(k, n, rsb, csb),
                    "gemm: rhs buffer too short"
                );
                assert!(
                    c.len() >= span(m, n, rsc, csc),
                    "gemm: output buffer too short"
                );
                // SAFETY: the asserts above bound every strided access inside the slices.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    )
                }
            }

            fn from_f64(v: f64) -> Self {
                v as $t
            }

            fn to_f64(self) -> f64 {
                self as f64
            }

            fn to_le_bytes_into(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn from_le_slice(bytes: &[u8]) -> Self {
                <$t>::from_le_bytes(bytes.try_into().expect("element byte width"))
            }
        }
    };
}

impl_element!(f32, DType::F32, matrixmultiply::sgemm);
impl_element!(f64, DType::F64, matrixmultiply::dgemm);

/// `(n, c, h, w)`; all dims are at least one.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    /// Shape of `rows` tokens of width `width`.
    pub const fn tokens(rows: usize, width: usize) -> Self {
        Shape::new(rows, width, 1, 1)
    }

    pub const fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn with_c(self, c: usize) -> Self {
        Shape { c, ..self }
    }

    fn validate(&self) -> Result<()> {
        if self.dims().contains(&0) {
            return Err(Error::Shape(format!("zero-sized dimension in {self}")));
        }
        Ok(())
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data.iter().take(8).collect();
        write!(f, "Tensor{} {:?}", self.shape, preview)?;
        if self.data.len() > 8 {
            write!(f, "...")?;
        }
        Ok(())
    }
}

impl<T: Element> Tensor<T> {
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.numel() {
            return Err(Error::Shape(format!(
                "buffer of length {} does not fill shape {shape}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn full(shape: Shape, value: T) -> Self {
        assert!(shape.numel() > 0, "zero-sized dimension in {shape}");
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: Shape) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(v: T) -> Self {
        Self::full(Shape::scalar(), v)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f([n, c, h, w]));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        let s = self.shape;
        ((n * s.c + c) * s.h + h) * s.w + w
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.index(n, c, h, w)]
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {}", self.shape);
        self.data[0]
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Tensor::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// One batch item as its own `(1, c, h, w)` tensor.
    pub fn batch_item(&self, i: usize) -> Tensor<T> {
        let s = self.shape;
        let len = s.c * s.plane();
        Tensor {
            shape: Shape::new(1, s.c, s.h, s.w),
            data: self.data[i * len..(i + 1) * len].to_vec(),
        }
    }

    /// Stack tensors sharing `(c, h, w)` along the batch axis.
    pub fn stack_batch(items: &[Tensor<T>]) -> Result<Tensor<T>> {
        let first = items
            .first()
            .ok_or_else(|| Error::Shape("stack of zero tensors".into()))?
            .shape;
        let mut data = Vec::new();
        let mut n = 0;
        for t in items {
            let s = t.shape;
            if (s.c, s.h, s.w) != (first.c, first.h, first.w) {
                return Err(Error::Shape(format!("cannot stack {s} with {first}")));
            }
            n += s.n;
            data.extend_from_slice(&t.data);
        }
        Tensor::from_vec(Shape::new(n, first.c, first.h, first.w), data)
    }
}

/// Elementwise binary operator for [`binary`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    fn apply<T: Element>(self, a: T, b: T) -> T {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
        }
    }
}

/// Whether `b` can be combined with `a`: equal shapes, or `b` has one channel.
pub fn check_broadcast(a: Shape, b: Shape) -> Result<bool> {
    if a == b {
        Ok(false)
    } else if b.c == 1 && (a.n, a.h, a.w) == (b.n, b.h, b.w) {
        Ok(true)
    } else {
        Err(Error::Shape(format!(
            "shapes {a} and {b} are neither equal nor channel-broadcastable"
        )))
    }
}

pub fn binary<T: Element>(op: BinaryOp, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let broadcast = check_broadcast(a.shape, b.shape)?;
    if !broadcast {
        let data = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(&x, &y)| op.apply(x, y))
            .collect();
        return Ok(Tensor {
            shape: a.shape,
            data,
        });
    }
    let s = a.shape;
    let plane = s.plane();
    let mut data = Vec::with_capacity(s.numel());
    for n in 0..s.n {
        let bp = &b.data[n * plane..(n + 1) * plane];
        for c in 0..s.c {
            let base = (n * s.c + c) * plane;
            let ap = &a.data[base..base + plane];
            data.extend(ap.iter().zip(bp).map(|(&x, &y)| op.apply(x, y)));
        }
    }
    Ok(Tensor { shape: s, data })
}

pub fn sigmoid<T: Element>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Statistic reduced across the channel axis by [`channel_stats`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelStat {
    Mean,
    Variance,
}

/// Per-(n, h, w) mean or population variance across channels; output has `c = 1`.
///
/// The mean is accumulated as offsets from channel 0, so channel-constant
/// inputs give their exact value as mean and exactly zero variance.
pub fn channel_stats<T: Element>(x: &Tensor<T>, stat: ChannelStat) -> Tensor<T> {
    let s = x.shape;
    let plane = s.plane();
    let inv_c = T::one() / T::from_f64(s.c as f64);
    let mut mean = vec![T::zero(); s.n * plane];
    for n in 0..s.n {
        let m = &mut mean[n * plane..(n + 1) * plane];
        let first = &x.data[n * s.c * plane..][..plane];
        for c in 1..s.c {
            let base = (n * s.c + c) * plane;
            for ((acc, &v), &v0) in m.iter_mut().zip(&x.data[base..base + plane]).zip(first) {
                *acc = *acc + (v - v0);
            }
        }
        m.iter_mut()
            .zip(first)
            .for_each(|(v, &v0)| *v = v0 + *v * inv_c);
    }
    let out_shape = s.with_c(1);
    if stat == ChannelStat::Mean {
        return Tensor {
            shape: out_shape,
            data: mean,
        };
    }
    let mut var = vec![T::zero(); s.n * plane];
    for n in 0..s.n {
        let m = &mean[n * plane..(n + 1) * plane];
        let v = &mut var[n * plane..(n + 1) * plane];
        for c in 0..s.c {
            let base = (n * s.c + c) * plane;
            for ((acc, &mu), &xv) in v.iter_mut().zip(m).zip(&x.data[base..base + plane]) {
                let d = xv - mu;
                *acc = *acc + d * d;
            }
        }
        v.iter_mut().for_each(|e| *e = *e * inv_c);
    }
    Tensor {
        shape: out_shape,
        data: var,
    }
}

pub fn concat_c<T: Element>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?
        .shape;
    let mut c_total = 0;
    for p in parts {
        let s = p.shape;
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::Shape(format!(
                "channel concat needs equal (n, h, w): {first} vs {s}"
            )));
        }
        c_total += s.c;
    }
    let out_shape = first.with_c(c_total);
    let mut data = Vec::with_capacity(out_shape.numel());
    for n in 0..first.n {
        for p in parts {
            let len = p.shape.c * first.plane();
            data.extend_from_slice(&p.data[n * len..(n + 1) * len]);
        }
    }
    Ok(Tensor {
        shape: out_shape,
        data,
    })
}

/// Channels `[start, start + len)` of `x`.
pub fn slice_c<T: Element>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let s = x.shape;
    if len == 0 || start + len > s.c {
        return Err(Error::Shape(format!(
            "channel slice [{start}, {}) out of range for {s}",
            start + len
        )));
    }
    let plane = s.plane();
    let mut data = Vec::with_capacity(s.n * len * plane);
    for n in 0..s.n {
        let base = (n * s.c + start) * plane;
        data.extend_from_slice(&x.data[base..base + len * plane]);
    }
    Ok(Tensor {
        shape: s.with_c(len),
        data,
    })
}

pub fn split_c<T: Element>(x: &Tensor<T>, sizes: &[usize]) -> Result<Vec<Tensor<T>>> {
    let total: usize = sizes.iter().sum();
    if total != x.shape.c {
        return Err(Error::Shape(format!(
            "split sizes {sizes:?} sum to {total}, tensor has {} channels",
            x.shape.c
        )));
    }
    let mut start = 0;
    sizes
        .iter()
        .map(|&len| {
            let part = slice_c(x, start, len);
            start += len;
            part
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interp {
    Nearest,
    Bilinear,
}

/// Source taps for one output coordinate of a bilinear resize (align-corners off).
#[derive(Clone, Copy, Debug)]
pub(crate) struct Tap<T> {
    pub lo: usize,
    pub hi: usize,
    pub frac: T,
}

pub(crate) fn bilinear_taps<T: Element>(
    out_len: usize,
    factor: usize,
    in_len: usize,
) -> Vec<Tap<T>> {
    let f = factor as f64;
    (0..out_len)
        .map(|i| {
            let src = ((i as f64 + 0.5) / f - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            Tap {
                lo,
                hi,
                frac: T::from_f64(src - lo as f64),
            }
        })
        .collect()
}

pub fn upsample<T: Element>(x: &Tensor<T>, factor: usize, mode: Interp) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(Error::Config("upsample factor must be at least 1".into()));
    }
    let s = x.shape;
    if factor == 1 {
        return Ok(x.clone());
    }
    let (oh, ow) = (s.h * factor, s.w * factor);
    let out_shape = Shape::new(s.n, s.c, oh, ow);
    let mut data = Vec::with_capacity(out_shape.numel());
    match mode {
        Interp::Nearest => {
            for map in x.data.chunks_exact(s.plane()) {
                for y in 0..oh {
                    let row = &map[(y / factor) * s.w..(y / factor + 1) * s.w];
                    for xo in 0..ow {
                        data.push(row[xo / factor]);
                    }
                }
            }
        }
        Interp::Bilinear => {
            let ty = bilinear_taps::<T>(oh, factor, s.h);
            let tx = bilinear_taps::<T>(ow, factor, s.w);
            for map in x.data.chunks_exact(s.plane()) {
                for yt in &ty {
                    let r0 = &map[yt.lo * s.w..(yt.lo + 1) * s.w];
                    let r1 = &map[yt.hi * s.w..(yt.hi + 1) * s.w];
                    for xt in &tx {
                        let top = r0[xt.lo] + (r0[xt.hi] - r0[xt.lo]) * xt.frac;
                        let bot = r1[xt.lo] + (r1[xt.hi] - r1[xt.lo]) * xt.frac;
                        data.push(top + (bot - top) * yt.frac);
                    }
                }
            }
        }
    }
    Ok(Tensor {
        shape: out_shape,
        data,
    })
}
