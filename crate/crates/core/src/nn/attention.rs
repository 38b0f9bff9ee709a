//! Multi-head scaled dot-product attention over token tensors.
//!
//! Token tensors hold `groups` independent sequences stacked along the row
//! axis (one per batch item). Queries of group `g` only attend to keys of
//! group `g`.

use crate::autodiff::{Ctx, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::linear::Linear;
use crate::param::{ParamBuilder, ParamStore};
use crate::tensor::{Element, Shape, Tensor};

#[derive(Clone, Copy, Debug)]
struct Dims {
    groups: usize,
    heads: usize,
    lq: usize,
    lk: usize,
    d: usize,
}

impl Dims {
    fn head_dim(&self) -> usize {
        self.d / self.heads
    }
}

fn check_dims(q: Shape, k: Shape, v: Shape, groups: usize, heads: usize) -> Result<Dims> {
    if heads == 0 || !q.c.is_multiple_of(heads) {
        return Err(Error::Config(format!(
            "width {} is not divisible by {heads} heads",
            q.c
        )));
    }
    for s in [q, k, v] {
        if s.h != 1 || s.w != 1 || s.c != q.c {
            return Err(Error::Shape(format!(
                "attention operand {s} is not a token tensor of width {}",
                q.c
            )));
        }
    }
    if k != v {
        return Err(Error::Shape(format!("keys {k} and values {v} differ")));
    }
    if groups == 0 || !q.n.is_multiple_of(groups) || !k.n.is_multiple_of(groups) {
        return Err(Error::Shape(format!(
            "{} queries / {} keys do not split into {groups} groups",
            q.n, k.n
        )));
    }
    Ok(Dims {
        groups,
        heads,
        lq: q.n / groups,
        lk: k.n / groups,
        d: q.c,
    })
}

/// Softmax attention probabilities laid out `[group][head][query][key]`.
fn probabilities<T: Element>(q: &[T], k: &[T], dims: Dims) -> Vec<T> {
    let dh = dims.head_dim();
    let scale = T::one() / T::from_f64(dh as f64).sqrt();
    let mut probs = vec![T::zero(); dims.groups * dims.heads * dims.lq * dims.lk];
    let mut rows = probs.chunks_exact_mut(dims.lk);
    for g in 0..dims.groups {
        for h in 0..dims.heads {
            for i in 0..dims.lq {
                let row = rows.next().expect("row count");
                let qi = &q[(g * dims.lq + i) * dims.d + h * dh..][..dh];
                let mut max = T::neg_infinity();
                for (j, s) in row.iter_mut().enumerate() {
                    let kj = &k[(g * dims.lk + j) * dims.d + h * dh..][..dh];
                    *s = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum::<T>() * scale;
                    max = max.max(*s);
                }
                let mut total = T::zero();
                for s in row.iter_mut() {
                    *s = (*s - max).exp();
                    total = total + *s;
                }
                row.iter_mut().for_each(|s| *s = *s / total);
            }
        }
    }
    probs
}

/// Attention probabilities of `queries` over `keys`, `[group][head][query][key]`.
pub fn attention_probabilities<T: Element>(
    queries: &Tensor<T>,
    keys: &Tensor<T>,
    groups: usize,
    heads: usize,
) -> Result<Vec<T>> {
    let dims = check_dims(queries.shape(), keys.shape(), keys.shape(), groups, heads)?;
    Ok(probabilities(queries.data(), keys.data(), dims))
}

impl<T: Element> Tape<T> {
    /// `softmax(q k^T / sqrt(d_head)) v` per group and head, heads concatenated.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        groups: usize,
        heads: usize,
    ) -> Result<Var> {
        let dims = check_dims(self.shape(q), self.shape(k), self.shape(v), groups, heads)?;
        let dh = dims.head_dim();
        let probs = probabilities(self.value(q).data(), self.value(k).data(), dims);
        let vv = self.value(v).data();
        let mut out = vec![T::zero(); dims.groups * dims.lq * dims.d];
        let mut rows = probs.chunks_exact(dims.lk);
        for g in 0..dims.groups {
            for h in 0..dims.heads {
                for i in 0..dims.lq {
                    let p = rows.next().expect("row count");
                    let o = &mut out[(g * dims.lq + i) * dims.d + h * dh..][..dh];
                    for (j, &pj) in p.iter().enumerate() {
                        let vj = &vv[(g * dims.lk + j) * dims.d + h * dh..][..dh];
                        o.iter_mut().zip(vj).for_each(|(a, &b)| *a = *a + pj * b);
                    }
                }
            }
        }
        let value = Tensor::from_vec(Shape::tokens(dims.groups * dims.lq, dims.d), out)?;
        let back = Box::new(move |ctx: &Ctx<'_, T>, go: &Tensor<T>| {
            let (qv, kv, vv) = (
                ctx.input(0).data(),
                ctx.input(1).data(),
                ctx.input(2).data(),
            );
            let go = go.data();
            let scale = T::one() / T::from_f64(dh as f64).sqrt();
            let mut gq = vec![T::zero(); qv.len()];
            let mut gk = vec![T::zero(); kv.len()];
            let mut gv = vec![T::zero(); vv.len()];
            let mut dp = vec![T::zero(); dims.lk];
            let mut rows = probs.chunks_exact(dims.lk);
            for g in 0..dims.groups {
                for h in 0..dims.heads {
                    for i in 0..dims.lq {
                        let p = rows.next().expect("row count");
                        let qoff = (g * dims.lq + i) * dims.d + h * dh;
                        let goi = &go[qoff..qoff + dh];
                        for (j, (&pj, dpj)) in p.iter().zip(dp.iter_mut()).enumerate() {
                            let koff = (g * dims.lk + j) * dims.d + h * dh;
                            *dpj = goi
                                .iter()
                                .zip(&vv[koff..koff + dh])
                                .map(|(&a, &b)| a * b)
                                .sum();
                            gv[koff..koff + dh]
                                .iter_mut()
                                .zip(goi)
                                .for_each(|(a, &b)| *a = *a + pj * b);
                        }
                        let inner: T = p.iter().zip(&dp).map(|(&a, &b)| a * b).sum();
                        for (j, (&pj, &dpj)) in p.iter().zip(&dp).enumerate() {
                            let ds = pj * (dpj - inner) * scale;
                            if ds == T::zero() {
                                continue;
                            }
                            let koff = (g * dims.lk + j) * dims.d + h * dh;
                            for e in 0..dh {
                                gq[qoff + e] = gq[qoff + e] + ds * kv[koff + e];
                                gk[koff + e] = gk[koff + e] + ds * qv[qoff + e];
                            }
                        }
                    }
                }
            }
            vec![
                ctx.needs(0)
                    .then(|| Tensor::from_vec(ctx.input(0).shape(), gq).expect("shape")),
                ctx.needs(1)
                    .then(|| Tensor::from_vec(ctx.input(1).shape(), gk).expect("shape")),
                ctx.needs(2)
                    .then(|| Tensor::from_vec(ctx.input(2).shape(), gv).expect("shape")),
            ]
        });
        Ok(self.push_op(value, &[q, k, v], back))
    }
}

/// Projections around [`Tape::attention`].
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub d_model: usize,
    pub q_proj: Linear,
    pub k_proj: Linear,
    pub v_proj: Linear,
    pub out_proj: Linear,
}

impl MultiHeadAttention {
    pub fn new<T: Element>(
        b: &mut ParamBuilder<'_, T>,
        name: &str,
        d_model: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || !d_model.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "d_model {d_model} is not divisible by {heads} heads"
            )));
        }
        b.scope(name, |b| {
            Ok(MultiHeadAttention {
                heads,
                d_model,
                q_proj: Linear::new(b, "q_proj", d_model, d_model, true)?,
                // A key bias adds the same score to every key of a query, which
                // softmax cancels, so it would never receive a gradient.
                k_proj: Linear::new(b, "k_proj", d_model, d_model, false)?,
                v_proj: Linear::new(b, "v_proj", d_model, d_model, true)?,
                out_proj: Linear::new(b, "out_proj", d_model, d_model, true)?,
            })
        })
    }

    pub fn forward<T: Element>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        queries: Var,
        keys_values: Var,
        groups: usize,
    ) -> Result<Var> {
        let q = self.q_proj.forward(tape, store, queries)?;
        let k = self.k_proj.forward(tape, store, keys_values)?;
        let v = self.v_proj.forward(tape, store, keys_values)?;
        let a = tape.attention(q, k, v, groups, self.heads)?;
        self.out_proj.forward(tape, store, a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = Rng::new(11);
        let q = rng.normal_tensor::<f64>(Shape::tokens(2 * 3, 8), 2.0);
        let k = rng.normal_tensor::<f64>(Shape::tokens(2 * 7, 8), 2.0);
        let p = attention_probabilities(&q, &k, 2, 4).unwrap();
        assert_eq!(p.len(), 2 * 4 * 3 * 7);
        for row in p.chunks(7) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn single_key_passes_value_through() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = Rng::new(1);
        let mha =
            MultiHeadAttention::new(&mut ParamBuilder::new(&mut store, &mut rng), "attn", 8, 2)
                .unwrap();
        let q_in = rng.normal_tensor::<f64>(Shape::tokens(3, 8), 1.0);
        let kv_in = rng.normal_tensor::<f64>(Shape::tokens(1, 8), 1.0);
        let mut tape = Tape::new();
        let (qv, kvv) = (tape.constant(q_in), tape.constant(kv_in));
        let out = mha.forward(&mut tape, &store, qv, kvv, 1).unwrap();
        let v = mha.v_proj.forward(&mut tape, &store, kvv).unwrap();
        let expected = mha.out_proj.forward(&mut tape, &store, v).unwrap();
        let expected = tape.value(expected).data().to_vec();
        for row in tape.value(out).data().chunks(8) {
            for (a, b) in row.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn joint_key_value_permutation_is_invisible() {
        let mut rng = Rng::new(4);
        let q = rng.normal_tensor::<f64>(Shape::tokens(3, 8), 1.0);
        let k = rng.normal_tensor::<f64>(Shape::tokens(9, 8), 1.0);
        let v = rng.normal_tensor::<f64>(Shape::tokens(9, 8), 1.0);
        let mut perm: Vec<usize> = (0..9).collect();
        rng.shuffle(&mut perm);
        let permute = |t: &Tensor<f64>| {
            let data = perm
                .iter()
                .flat_map(|&r| t.data()[r * 8..(r + 1) * 8].to_vec())
                .collect();
            Tensor::from_vec(t.shape(), data).unwrap()
        };
        let run = |k: Tensor<f64>, v: Tensor<f64>| {
            let mut tape = Tape::new();
            let (qv, kv, vv) = (tape.constant(q.clone()), tape.constant(k), tape.constant(v));
            let o = tape.attention(qv, kv, vv, 1, 2).unwrap();
            tape.value(o).clone()
        };
        let a = run(k.clone(), v.clone());
        let b = run(permute(&k), permute(&v));
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = Rng::new(0);
        assert!(
            MultiHeadAttention::new(&mut ParamBuilder::new(&mut store, &mut rng), "a", 10, 4)
                .is_err()
        );
    }
}
