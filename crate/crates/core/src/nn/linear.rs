use crate::autodiff::{Ctx, Tape, Var};
use crate::error::{Error, Result};
use crate::param::{ParamBuilder, ParamId, ParamStore};
use crate::tensor::{Element, Shape, Tensor};

impl<T: Element> Tape<T> {
    /// Affine map per token: `x (rows, d_in)`, `weight (d_out, d_in, 1, 1)`, `bias (1, d_out, 1, 1)`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(weight));
        if xs.h != 1 || xs.w != 1 {
            return Err(Error::Shape(format!("linear expects tokens, got {xs}")));
        }
        if ws.c != xs.c || ws.h != 1 || ws.w != 1 {
            return Err(Error::Shape(format!(
                "linear weight {ws} does not accept tokens {xs}"
            )));
        }
        let (rows, d_in, d_out) = (xs.n, xs.c, ws.n);
        if let Some(b) = bias {
            let bs = self.shape(b);
            if bs != Shape::new(1, d_out, 1, 1) {
                return Err(Error::Shape(format!("linear bias {bs} for width {d_out}")));
            }
        }
        let mut out = Tensor::zeros(Shape::tokens(rows, d_out));
        // Y = X W^T
        T::gemm(
            rows,
            d_in,
            d_out,
            T::one(),
            self.value(x).data(),
            d_in as isize,
            1,
            self.value(weight).data(),
            1,
            d_in as isize,
            T::zero(),
            out.data_mut(),
            d_out as isize,
            1,
        );
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for row in out.data_mut().chunks_exact_mut(d_out) {
                row.iter_mut().zip(bv).for_each(|(y, &bb)| *y = *y + bb);
            }
        }
        let has_bias = bias.is_some();
        let back = Box::new(move |ctx: &Ctx<'_, T>, g: &Tensor<T>| {
            let (xv, wv) = (ctx.input(0).data(), ctx.input(1).data());
            let gx = ctx.needs(0).then(|| {
                let mut gx = Tensor::zeros(ctx.input(0).shape());
                T::gemm(
                    rows,
                    d_out,
                    d_in,
                    T::one(),
                    g.data(),
                    d_out as isize,
                    1,
                    wv,
                    d_in as isize,
                    1,
                    T::zero(),
                    gx.data_mut(),
                    d_in as isize,
                    1,
                );
                gx
            });
            let gw = ctx.needs(1).then(|| {
                let mut gw = Tensor::zeros(ctx.input(1).shape());
                T::gemm(
                    d_out,
                    rows,
                    d_in,
                    T::one(),
                    g.data(),
                    1,
                    d_out as isize,
                    xv,
                    d_in as isize,
                    1,
                    T::zero(),
                    gw.data_mut(),
                    d_in as isize,
                    1,
                );
                gw
            });
            let mut grads = vec![gx, gw];
            if has_bias {
                grads.push(ctx.needs(2).then(|| {
                    let mut d = vec![T::zero(); d_out];
                    for row in g.data().chunks_exact(d_out) {
                        d.iter_mut().zip(row).for_each(|(a, &v)| *a = *a + v);
                    }
                    Tensor::from_vec(Shape::new(1, d_out, 1, 1), d).expect("bias shape")
                }));
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

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<T: Element>(
        b: &mut ParamBuilder<'_, T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
    ) -> Result<Self> {
        let bound = 1.0 / (d_in as f64).sqrt();
        b.scope(name, |b| {
            let weight = b.uniform("weight", Shape::new(d_out, d_in, 1, 1), bound)?;
            let bias = if bias {
                Some(b.zeros("bias", Shape::new(1, d_out, 1, 1))?)
            } else {
                None
            };
            Ok(Linear {
                weight,
                bias,
                d_in,
                d_out,
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
        tape.linear(x, w, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn eval(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let mut tape = Tape::new();
        let (xv, wv, bv) = (
            tape.constant(x.clone()),
            tape.constant(w.clone()),
            tape.constant(b.clone()),
        );
        let y = tape.linear(xv, wv, Some(bv)).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn identity_and_bias_only() {
        let x = Rng::new(2).normal_tensor::<f64>(Shape::tokens(5, 4), 1.0);
        let eye = Tensor::from_fn(
            Shape::new(4, 4, 1, 1),
            |[o, i, _, _]| if o == i { 1.0 } else { 0.0 },
        );
        assert_eq!(eval(&x, &eye, &Tensor::zeros(Shape::new(1, 4, 1, 1))), x);
        let bias = Tensor::from_vec(Shape::new(1, 3, 1, 1), vec![0.5, -1.0, 2.0]).unwrap();
        let y = eval(&x, &Tensor::zeros(Shape::new(3, 4, 1, 1)), &bias);
        for row in y.data().chunks(3) {
            assert_eq!(row, bias.data());
        }
    }

    #[test]
    fn rejects_width_mismatch() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::ones(Shape::tokens(2, 3)));
        let w = tape.constant(Tensor::ones(Shape::new(4, 5, 1, 1)));
        assert!(tape.linear(x, w, None).is_err());
    }
}
