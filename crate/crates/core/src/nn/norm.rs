use crate::autodiff::{Ctx, Tape, Var};
use crate::error::{Error, Result};
use crate::param::{ParamBuilder, ParamId, ParamStore};
use crate::tensor::{Element, Shape, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl<T: Element> Tape<T> {
    /// Per-token standardisation followed by `gain * x + shift`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var) -> Result<Var> {
        let xs = self.shape(x);
        let d = xs.c;
        if xs.h != 1 || xs.w != 1 || d < 2 {
            return Err(Error::Shape(format!(
                "layer_norm expects tokens of width >= 2, got {xs}"
            )));
        }
        for v in [gain, shift] {
            if self.shape(v) != Shape::new(1, d, 1, 1) {
                return Err(Error::Shape(format!(
                    "layer_norm affine {} for width {d}",
                    self.shape(v)
                )));
            }
        }
        let eps = T::from_f64(LAYER_NORM_EPS);
        let inv_d = T::one() / T::from_f64(d as f64);
        let (gv, bv) = (self.value(gain).data(), self.value(shift).data());
        let mut normed = Vec::with_capacity(xs.numel());
        let mut rstd = Vec::with_capacity(xs.n);
        for row in self.value(x).data().chunks_exact(d) {
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            normed.extend(row.iter().map(|&v| (v - mean) * r));
        }
        let out: Vec<T> = normed
            .chunks_exact(d)
            .flat_map(|row| row.iter().zip(gv).zip(bv).map(|((&n, &g), &b)| n * g + b))
            .collect();
        let value = Tensor::from_vec(xs, out)?;
        let back = Box::new(move |ctx: &Ctx<'_, T>, g: &Tensor<T>| {
            let gv = ctx.input(1).data();
            let mut gx = vec![T::zero(); xs.numel()];
            let mut gg = vec![T::zero(); d];
            let mut gb = vec![T::zero(); d];
            for (((gy, nrow), gxr), &r) in g
                .data()
                .chunks_exact(d)
                .zip(normed.chunks_exact(d))
                .zip(gx.chunks_exact_mut(d))
                .zip(&rstd)
            {
                for i in 0..d {
                    gg[i] = gg[i] + gy[i] * nrow[i];
                    gb[i] = gb[i] + gy[i];
                }
                // dx = r * (dn - mean(dn) - n * mean(dn * n)), dn = gy * gain
                let dn: Vec<T> = gy.iter().zip(gv).map(|(&a, &b)| a * b).collect();
                let mean_dn = dn.iter().copied().sum::<T>() * inv_d;
                let mean_dn_n = dn.iter().zip(nrow).map(|(&a, &b)| a * b).sum::<T>() * inv_d;
                for i in 0..d {
                    gxr[i] = r * (dn[i] - mean_dn - nrow[i] * mean_dn_n);
                }
            }
            let vec_shape = Shape::new(1, d, 1, 1);
            vec![
                ctx.needs(0)
                    .then(|| Tensor::from_vec(xs, gx).expect("shape")),
                ctx.needs(1)
                    .then(|| Tensor::from_vec(vec_shape, gg).expect("shape")),
                ctx.needs(2)
                    .then(|| Tensor::from_vec(vec_shape, gb).expect("shape")),
            ]
        });
        Ok(self.push_op(value, &[x, gain, shift], back))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl LayerNorm {
    pub fn new<T: Element>(b: &mut ParamBuilder<'_, T>, name: &str, d: usize) -> Result<Self> {
        b.scope(name, |b| {
            Ok(LayerNorm {
                gain: b.ones("gain", Shape::new(1, d, 1, 1))?,
                shift: b.zeros("shift", Shape::new(1, d, 1, 1))?,
            })
        })
    }

    pub fn forward<T: Element>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let g = tape.param(store, self.gain);
        let s = tape.param(store, self.shift);
        tape.layer_norm(x, g, s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn norm(x: Tensor<f64>, shift: f64) -> Tensor<f64> {
        let d = x.shape().c;
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let g = tape.constant(Tensor::ones(Shape::new(1, d, 1, 1)));
        let s = tape.constant(Tensor::full(Shape::new(1, d, 1, 1), shift));
        let y = tape.layer_norm(xv, g, s).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn constant_token_maps_to_shift() {
        let y = norm(Tensor::full(Shape::tokens(3, 6), 4.2), 0.7);
        assert!(y.data().iter().all(|&v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn standardises_each_token() {
        let y = norm(Rng::new(3).normal_tensor(Shape::tokens(10, 16), 3.0), 0.0);
        for row in y.data().chunks(16) {
            let mean = row.iter().sum::<f64>() / 16.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() <= 1e-6);
            assert!((var - 1.0).abs() <= 1e-4);
        }
    }
}
