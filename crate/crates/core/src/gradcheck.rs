//! Central-difference gradient oracle and the built-in check suites.
//!
//! Every case stores its differentiable inputs as parameters of a float64
//! [`ParamStore`] and defines a scalar loss over them. Up to
//! [`COORDS_PER_PARAM`] coordinates of every parameter are compared against
//! `(f(θ + h) - f(θ - h)) / 2h` with `h = 1e-4 * max(1, |θ|)`.

use crate::autodiff::{Tape, Var};
use crate::blocks::{Dmfe, Mdfm, Msff, PoolPair, Ssfc, ValueSource};
use crate::error::{Error, Result};
use crate::network::{ModelConfig, Network, Targets};
use crate::nn::{Conv2d, LayerNorm, Linear, MultiHeadAttention, PoolMode};
use crate::param::{ParamBuilder, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Interp, Shape, Tensor};

/// Pass threshold on the maximum relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Relative central-difference step.
pub const FD_STEP: f64 = 1e-4;
/// Coordinates sampled per parameter tensor (all of them when smaller).
pub const COORDS_PER_PARAM: usize = 64;

/// Scalar loss evaluated on a fresh tape.
pub type LossFn = Box<dyn Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>>;

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

fn eval(store: &ParamStore<f64>, loss: &LossFn) -> Result<f64> {
    let mut tape = Tape::new();
    let l = loss(&mut tape, store)?;
    Ok(tape.value(l).item())
}

/// Analytic gradients of `loss` for every parameter, index-aligned with the store.
pub fn analytic_gradients(store: &ParamStore<f64>, loss: &LossFn) -> Result<Vec<Tensor<f64>>> {
    let mut tape = Tape::new();
    let l = loss(&mut tape, store)?;
    let grads = tape.backward(l)?;
    let mut scratch = store.clone();
    scratch.zero_grad();
    grads.accumulate_into(&mut scratch);
    Ok(scratch.iter().map(|(_, p)| p.grad.clone()).collect())
}

/// Max relative error between `analytic` and central differences of `f` at
/// the given flat coordinates of `param`.
pub fn fd_gradcheck(
    store: &mut ParamStore<f64>,
    f: &dyn Fn(&ParamStore<f64>) -> Result<f64>,
    param: ParamId,
    coords: &[usize],
    analytic: &Tensor<f64>,
    step: f64,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for &i in coords {
        let theta = store.get(param).value.data()[i];
        let h = step * theta.abs().max(1.0);
        store.get_mut(param).value.data_mut()[i] = theta + h;
        let plus = f(store);
        store.get_mut(param).value.data_mut()[i] = theta - h;
        let minus = f(store);
        store.get_mut(param).value.data_mut()[i] = theta;
        let (plus, minus) = (plus?, minus?);
        let fd = (plus - minus) / (2.0 * h);
        let a = analytic.data()[i];
        let name = &store.get(param).name;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("loss at {name}[{i}]")));
        }
        if !a.is_finite() {
            return Err(Error::NonFinite(format!(
                "analytic gradient at {name}[{i}]"
            )));
        }
        worst = worst.max(relative_error(a, fd));
    }
    Ok(worst)
}

/// Outcome of checking one case.
#[derive(Clone, Debug)]
pub struct CaseReport {
    pub name: String,
    pub seed: u64,
    pub max_rel_err: f64,
    pub worst_param: String,
    pub coords: usize,
    pub error: Option<String>,
}

impl CaseReport {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.max_rel_err <= GRADCHECK_TOLERANCE
    }
}

/// Check every parameter of `store` against `loss`, sampling coordinates from `seed`.
pub fn check_loss(name: &str, seed: u64, mut store: ParamStore<f64>, loss: &LossFn) -> CaseReport {
    let mut report = CaseReport {
        name: name.to_string(),
        seed,
        max_rel_err: 0.0,
        worst_param: String::new(),
        coords: 0,
        error: None,
    };
    let analytic = match analytic_gradients(&store, loss) {
        Ok(g) => g,
        Err(e) => {
            report.error = Some(e.to_string());
            return report;
        }
    };
    let mut rng = Rng::with_stream(seed, 0x6772_6164);
    let f = |s: &ParamStore<f64>| eval(s, loss);
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let numel = store.get(id).value.shape().numel();
        let mut coords: Vec<usize> = (0..numel).collect();
        rng.shuffle(&mut coords);
        coords.truncate(COORDS_PER_PARAM);
        coords.sort_unstable();
        match fd_gradcheck(&mut store, &f, id, &coords, &analytic[id.index()], FD_STEP) {
            Ok(err) => {
                report.coords += coords.len();
                if err > report.max_rel_err || report.worst_param.is_empty() {
                    report.max_rel_err = err.max(report.max_rel_err);
                    report.worst_param = store.get(id).name.clone();
                }
            }
            Err(e) => {
                report.error = Some(e.to_string());
                return report;
            }
        }
    }
    report
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    Ops,
    Blocks,
    Network,
}

impl std::str::FromStr for Scope {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ops" => Ok(Scope::Ops),
            "blocks" => Ok(Scope::Blocks),
            "network" => Ok(Scope::Network),
            other => Err(Error::Config(format!(
                "unknown gradcheck scope {other:?} (ops|blocks|network)"
            ))),
        }
    }
}

type Builder = fn(u64) -> Result<(ParamStore<f64>, LossFn)>;

/// `sum(out * R)` for a fixed random `R` scaled to keep the loss O(1).
fn project(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    let s = tape.shape(out);
    let r = Rng::with_stream(seed, 0x7072_6f6a)
        .normal_tensor::<f64>(s, 1.0 / (s.numel() as f64).sqrt());
    let r = tape.constant(r);
    let m = tape.mul(out, r)?;
    Ok(tape.sum(m))
}

/// Random values bounded away from zero, for ops with a kink or pole there.
fn away_from_zero(rng: &mut Rng, shape: Shape) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let mag = rng.uniform_in(0.3, 1.5);
        if rng.bernoulli(0.5) {
            mag
        } else {
            -mag
        }
    })
}

fn inputs(seed: u64, shapes: &[Shape]) -> (ParamStore<f64>, Vec<ParamId>) {
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::new();
    let ids = shapes
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            store
                .add(format!("x{i}"), rng.normal_tensor(s, 1.0))
                .expect("unique")
        })
        .collect();
    (store, ids)
}

macro_rules! op_case {
    ($shapes:expr, |$tape:ident, $x:ident, $seed:ident| $body:expr) => {{
        fn build(seed: u64) -> Result<(ParamStore<f64>, LossFn)> {
            let (store, ids) = inputs(seed, &$shapes);
            let loss: LossFn = Box::new(move |$tape: &mut Tape<f64>, store: &ParamStore<f64>| {
                let $x: Vec<Var> = ids.iter().map(|&id| $tape.param(store, id)).collect();
                let $seed = seed;
                let out: Var = $body?;
                project($tape, out, $seed)
            });
            Ok((store, loss))
        }
        build as Builder
    }};
}

fn abs_case(seed: u64) -> Result<(ParamStore<f64>, LossFn)> {
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::new();
    let a = store.add("x0", away_from_zero(&mut rng, Shape::new(2, 3, 4, 4)))?;
    let loss: LossFn = Box::new(move |tape, store| {
        let x = tape.param(store, a);
        let y = tape.abs(x);
        let z = tape.clamp_min(x, 0.0);
        let w = tape.clamp_max(x, 0.0);
        let c = tape.soft_ceiling(x, 0.5);
        let s = tape.add(y, z)?;
        let s = tape.add(s, c)?;
        let s = tape.mul(s, w)?;
        project(tape, s, seed)
    });
    Ok((store, loss))
}

fn div_case(seed: u64) -> Result<(ParamStore<f64>, LossFn)> {
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::new();
    let a = store.add("num", rng.normal_tensor(Shape::new(2, 3, 4, 4), 1.0))?;
    let b = store.add("den", away_from_zero(&mut rng, Shape::new(2, 3, 4, 4)))?;
    let c = store.add(
        "den_bcast",
        away_from_zero(&mut rng, Shape::new(2, 1, 4, 4)),
    )?;
    let loss: LossFn = Box::new(move |tape, store| {
        let (a, b, c) = (
            tape.param(store, a),
            tape.param(store, b),
            tape.param(store, c),
        );
        let q = tape.div(a, b)?;
        let r = tape.div(q, c)?;
        project(tape, r, seed)
    });
    Ok((store, loss))
}

fn bce_case(seed: u64) -> Result<(ParamStore<f64>, LossFn)> {
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::new();
    let shape = Shape::new(3, 1, 5, 5);
    let z = store.add("logits", rng.normal_tensor(shape, 2.0))?;
    let label = Tensor::from_fn(shape, |_| f64::from(u8::from(rng.bernoulli(0.4))));
    let loss: LossFn = Box::new(move |tape, store| {
        let zv = tape.param(store, z);
        tape.bce_with_logits(zv, &label, &[1.0, 0.0, 1.0])
    });
    Ok((store, loss))
}

fn layered(
    seed: u64,
    input: Shape,
    make: impl FnOnce(
        &mut ParamBuilder<'_, f64>,
    ) -> Result<Box<dyn Fn(&mut Tape<f64>, &ParamStore<f64>, Var) -> Result<Var>>>,
) -> Result<(ParamStore<f64>, LossFn)> {
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::new();
    let x = store.add("input", rng.normal_tensor(input, 1.0))?;
    let forward = make(&mut ParamBuilder::new(&mut store, &mut rng))?;
    // Randomise biases and gains away from their zero/one init so their
    // gradients are exercised at a generic point.
    for p in store.iter_mut() {
        if p.name.ends_with("bias") || p.name.ends_with("shift") || p.name.ends_with("gain") {
            p.value
                .data_mut()
                .iter_mut()
                .for_each(|v| *v += 0.2 * rng.normal());
        }
    }
    let loss: LossFn = Box::new(move |tape, store| {
        let xv = tape.param(store, x);
        let out = forward(tape, store, xv)?;
        project(tape, out, seed)
    });
    Ok((store, loss))
}

fn conv_case(seed: u64) -> Result<(ParamStore<f64>, LossFn)> {
    layered(seed, Shape::new(2, 3, 7, 7), |b| {
        let c1 = Conv2d::new(b, "conv3", 3, 4, 3, 1, true)?;
        let c2 = Conv2d::new(b, "conv5s2", 4, 2, 5, 2, true)?;
        let c3 = Conv2d::new(b, "conv1", 2, 3, 1, 1, false)?;
        Ok(Box::new(move |tape, store, x| {
            let y = c1.forward(tape, store, x)?;
            let y = c2.forward(tape, store, y)?;
            c3.forward(tape, store, y)
        }))
    })
}

fn pool_case(seed: u64) -> Result<(ParamStore<f64>, LossFn)> {
    layered(seed, Shape::new(2, 3, 8, 8), |_| {
        Ok(Box::new(|tape, _, x| {
            let a = tape.pool2d(x, PoolMode::Avg, 3, 2, 1)?;
            let m = tape.pool2d(x, PoolMode::Max, 2, 2, 0)?;
            tape.add(a, m)
        }))
    })
}

fn linear_norm_case(seed: u64) -> Result<(ParamStore<f64>, LossFn)> {
    layered(seed, Shape::tokens(5, 6), |b| {
        let norm = LayerNorm::new(b, "norm", 6)?;
        let lin = Linear::new(b, "linear", 6, 4, true)?;
        Ok(Box::new(move |tape, store, x| {
            let y = norm.forward(tape, store, x)?;
            lin.forward(tape, store, y)
        }))
    })
}

fn attention_case(seed: u64) -> Result<(ParamStore<f64>, LossFn)> {
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::new();
    let q = store.add("queries", rng.normal_tensor(Shape::tokens(2 * 3, 8), 1.0))?;
    let kv = store.add(
        "keys_values",
        rng.normal_tensor(Shape::tokens(2 * 12, 8), 1.0),
    )?;
    let mha = MultiHeadAttention::new(&mut ParamBuilder::new(&mut store, &mut rng), "mha", 8, 2)?;
    let loss: LossFn = Box::new(move |tape, store| {
        let (qv, kvv) = (tape.param(store, q), tape.param(store, kv));
        let cross = mha.forward(tape, store, qv, kvv, 2)?;
        let own = mha.forward(tape, store, cross, cross, 2)?;
        project(tape, own, seed)
    });
    Ok((store, loss))
}

fn token_case(seed: u64) -> Result<(ParamStore<f64>, LossFn)> {
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::new();
    let f = store.add("feature", rng.normal_tensor(Shape::new(2, 4, 3, 3), 1.0))?;
    let rows = store.add("rows", rng.normal_tensor(Shape::tokens(3, 4), 1.0))?;
    let loss: LossFn = Box::new(move |tape, store| {
        let (fv, rv) = (tape.param(store, f), tape.param(store, rows));
        let t = tape.to_tokens(fv);
        let g = tape.gather_rows(rv, &[2, 0, 2, 1])?;
        let cat = tape.concat_groups(&[t, g], 2)?;
        let e = tape.gather_rows(rv, &[1, 1])?;
        let dot = tape.channel_dot(fv, e)?;
        let a = project(tape, cat, seed)?;
        let b = project(tape, dot, seed + 1)?;
        let s = tape.add(a, b)?;
        let m = tape.mean(fv);
        tape.add(s, m)
    });
    Ok((store, loss))
}

fn msff_case(seed: u64) -> Result<(ParamStore<f64>, LossFn)> {
    layered(seed, Shape::new(1, 8, 6, 6), |b| {
        let m = Msff::new(b, "msff", 8)?;
        Ok(Box::new(move |tape, store, x| m.forward(tape, store, x)))
    })
}

fn ssfc_case(seed: u64) -> Result<(ParamStore<f64>, LossFn)> {
    layered(seed, Shape::new(2, 8, 6, 6), |b| {
        let pooled = Ssfc::new(b, "ssfc", 8, PoolPair::DEFAULT, ValueSource::Projection)?;
        let swapped = PoolPair {
            query: Some(PoolMode::Max),
            key: Some(PoolMode::Avg),
        };
        let alt = Ssfc::new(b, "ssfc_alt", 8, swapped, ValueSource::Input)?;
        let full = Ssfc::new(b, "ssfc_full", 8, PoolPair::NONE, ValueSource::Projection)?;
        Ok(Box::new(move |tape, store, x| {
            let y = pooled.forward(tape, store, x)?;
            let y = alt.forward(tape, store, y)?;
            full.forward(tape, store, y)
        }))
    })
}

fn dmfe_case(seed: u64) -> Result<(ParamStore<f64>, LossFn)> {
    layered(seed, Shape::new(1, 8, 8, 8), |b| {
        let d = Dmfe::new(b, "dmfe", 8, PoolPair::DEFAULT, ValueSource::Projection)?;
        Ok(Box::new(move |tape, store, x| d.forward(tape, store, x)))
    })
}

fn mdfm_case(seed: u64) -> Result<(ParamStore<f64>, LossFn)> {
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::new();
    let shape = Shape::new(1, 8, 6, 6);
    let x1 = store.add("x1", rng.normal_tensor(shape, 1.0))?;
    let x2 = store.add("x2", rng.normal_tensor(shape, 1.0))?;
    let m = Mdfm::new(&mut ParamBuilder::new(&mut store, &mut rng), "mdfm", 8)?;
    let loss: LossFn = Box::new(move |tape, store| {
        let (a, b) = (tape.param(store, x1), tape.param(store, x2));
        let out = m.forward(tape, store, a, b)?;
        project(tape, out, seed)
    });
    Ok((store, loss))
}

/// End-to-end loss of the tiny configuration on one 32x32 pair.
pub fn network_fixture(seed: u64) -> Result<(ParamStore<f64>, LossFn)> {
    let config = ModelConfig {
        seed,
        ..ModelConfig::tiny()
    };
    let (net, mut store) = Network::new::<f64>(&config)?;
    // Widen the init from ±1/√fan_in to the He-uniform ±√6/√fan_in. At the
    // default scale the deep gated paths carry gradients near 1e-9, below the
    // round-off of a central difference on an O(1) loss.
    for p in store.iter_mut().filter(|p| p.name.ends_with("weight")) {
        p.value
            .data_mut()
            .iter_mut()
            .for_each(|v| *v *= 6f64.sqrt());
    }
    let mut rng = Rng::with_stream(seed, 1);
    let img = Shape::new(1, 3, 32, 32);
    let t1 = store.add("input.t1", rng.uniform_tensor(img, 0.0, 1.0))?;
    let t2 = store.add("input.t2", rng.uniform_tensor(img, 0.0, 1.0))?;
    let mask = Shape::new(1, 1, 32, 32);
    let mut label = || Tensor::from_fn(mask, |_| f64::from(u8::from(rng.bernoulli(0.3))));
    let targets = Targets {
        labels: [label(), label(), label()],
        available: [vec![1.0], vec![1.0], vec![1.0]],
    };
    let loss: LossFn = Box::new(move |tape, store| {
        let (a, b) = (tape.param(store, t1), tape.param(store, t2));
        let fwd = net.forward(tape, store, a, b)?;
        net.loss(tape, &fwd.masks, &targets)
    });
    Ok((store, loss))
}

/// Square with a deliberately wrong backward (3x instead of 2x).
fn faulty_case(seed: u64) -> Result<(ParamStore<f64>, LossFn)> {
    let (store, ids) = inputs(seed, &[Shape::new(1, 2, 3, 3)]);
    let loss: LossFn = Box::new(move |tape, store| {
        let x = tape.param(store, ids[0]);
        let value = tape.value(x).map(|v| v * v);
        let sq = tape.push_op(
            value,
            &[x],
            Box::new(|ctx, g| {
                let x = ctx.input(0);
                let data = x
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gv)| 3.0 * v * gv)
                    .collect();
                vec![Some(Tensor::from_vec(x.shape(), data).expect("shape"))]
            }),
        );
        project(tape, sq, seed)
    });
    Ok((store, loss))
}

pub const FAULTY_CASE: &str = "faulty_square";

const S4: Shape = Shape {
    n: 2,
    c: 3,
    h: 4,
    w: 4,
};
const C1: Shape = Shape {
    n: 2,
    c: 1,
    h: 4,
    w: 4,
};
const S3: Shape = Shape {
    n: 2,
    c: 2,
    h: 3,
    w: 3,
};

/// Named cases of a scope.
pub fn cases(scope: Scope) -> Vec<(&'static str, Builder)> {
    match scope {
        Scope::Ops => vec![
            (
                "add",
                op_case!([S4, S4, C1], |t, x, _s| {
                    let y = t.add(x[0], x[1])?;
                    t.add(y, x[2])
                }),
            ),
            (
                "sub",
                op_case!([S4, S4, C1], |t, x, _s| {
                    let y = t.sub(x[0], x[1])?;
                    t.sub(y, x[2])
                }),
            ),
            (
                "mul",
                op_case!([S4, S4, C1], |t, x, _s| {
                    let y = t.mul(x[0], x[1])?;
                    t.mul(y, x[2])
                }),
            ),
            ("div", div_case as Builder),
            (
                "scale_shift",
                op_case!([S4], |t, x, _s| {
                    let y = t.scale(x[0], -1.7);
                    Ok::<_, Error>(t.add_scalar(y, 0.3))
                }),
            ),
            ("abs_clamp", abs_case as Builder),
            (
                "sigmoid_silu",
                op_case!([S4], |t, x, _s| {
                    let y = t.sigmoid(x[0]);
                    let z = t.silu(x[0]);
                    t.mul(y, z)
                }),
            ),
            (
                "channel_stats",
                op_case!([S4], |t, x, _s| {
                    let m = t.channel_mean(x[0]);
                    let v = t.channel_var(x[0]);
                    t.concat_c(&[m, v])
                }),
            ),
            (
                "concat_split",
                op_case!([S4, C1], |t, x, _s| {
                    let cat = t.concat_c(&[x[0], x[1]])?;
                    let parts = t.split_c(cat, &[1, 2, 1])?;
                    let mid = t.slice_c(cat, 1, 2)?;
                    let a = t.mul(parts[1], mid)?;
                    let b = t.concat_c(&[parts[2], parts[0]])?;
                    t.add(a, b)
                }),
            ),
            (
                "upsample",
                op_case!([S3], |t, x, _s| {
                    let a = t.upsample(x[0], 2, Interp::Nearest)?;
                    let b = t.upsample(x[0], 2, Interp::Bilinear)?;
                    let c = t.mul(a, b)?;
                    let d = t.upsample(x[0], 3, Interp::Bilinear)?;
                    let c = t.upsample(c, 3, Interp::Nearest)?;
                    let d = t.upsample(d, 2, Interp::Nearest)?;
                    t.add(c, d)
                }),
            ),
            ("tokens_gather_dot", token_case as Builder),
            ("bce_with_logits", bce_case as Builder),
            ("conv2d", conv_case as Builder),
            ("pool2d", pool_case as Builder),
            ("linear_layer_norm", linear_norm_case as Builder),
            ("attention", attention_case as Builder),
        ],
        Scope::Blocks => vec![
            ("msff", msff_case as Builder),
            ("ssfc", ssfc_case as Builder),
            ("dmfe", dmfe_case as Builder),
            ("mdfm", mdfm_case as Builder),
        ],
        Scope::Network => vec![("network_tiny", network_fixture as Builder)],
    }
}

/// Run every case of `scope` for each seed. `inject_faulty` appends a case
/// whose backward is wrong, to confirm the suite can fail.
pub fn run_scope(scope: Scope, seeds: &[u64], inject_faulty: bool) -> Vec<CaseReport> {
    run_scope_with(scope, seeds, inject_faulty, |_| {})
}

/// [`run_scope`], calling `on_report` as each case finishes.
pub fn run_scope_with(
    scope: Scope,
    seeds: &[u64],
    inject_faulty: bool,
    mut on_report: impl FnMut(&CaseReport),
) -> Vec<CaseReport> {
    let mut list = cases(scope);
    if inject_faulty {
        list.push((FAULTY_CASE, faulty_case as Builder));
    }
    let mut reports = Vec::new();
    for &seed in seeds {
        for (name, build) in &list {
            let report = match build(seed) {
                Ok((store, loss)) => check_loss(name, seed, store, &loss),
                Err(e) => CaseReport {
                    name: name.to_string(),
                    seed,
                    max_rel_err: f64::INFINITY,
                    worst_param: String::new(),
                    coords: 0,
                    error: Some(e.to_string()),
                },
            };
            on_report(&report);
            reports.push(report);
        }
    }
    reports
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let mut store = ParamStore::new();
        let id = store
            .add(
                "theta",
                Tensor::from_vec(Shape::tokens(2, 1), vec![1.0, 2.0]).unwrap(),
            )
            .unwrap();
        let f = |s: &ParamStore<f64>| Ok(s.get(id).value.data().iter().map(|v| v * v).sum());
        let analytic = Tensor::from_vec(Shape::tokens(2, 1), vec![2.0, 4.0]).unwrap();
        let err = fd_gradcheck(&mut store, &f, id, &[0, 1], &analytic, FD_STEP).unwrap();
        assert!(err <= 1e-8, "{err}");
        assert_eq!(store.get(id).value.data(), &[1.0, 2.0]);
    }

    #[test]
    fn one_by_one_conv_is_tight() {
        let build: Builder = |seed| {
            layered(seed, Shape::new(2, 3, 4, 4), |b| {
                let c = Conv2d::new(b, "conv", 3, 5, 1, 1, true)?;
                Ok(Box::new(move |tape, store, x| c.forward(tape, store, x)))
            })
        };
        let (store, loss) = build(1).unwrap();
        let r = check_loss("conv1x1", 1, store, &loss);
        assert!(r.error.is_none() && r.max_rel_err <= 1e-6, "{r:?}");
    }

    #[test]
    fn non_finite_loss_names_coordinate() {
        let mut store = ParamStore::new();
        let id = store.add("theta", Tensor::scalar(1.0)).unwrap();
        let f = |s: &ParamStore<f64>| {
            Ok(if s.get(id).value.item() > 1.0 {
                f64::NAN
            } else {
                0.0
            })
        };
        let err = fd_gradcheck(&mut store, &f, id, &[0], &Tensor::scalar(0.0), FD_STEP).unwrap_err();
        assert!(err.to_string().contains("theta[0]"), "{err}");
    }

    #[test]
    fn op_suite_within_tight_tolerance() {
        for r in run_scope(Scope::Ops, &[1, 2, 3], false) {
            assert!(r.error.is_none() && r.max_rel_err <= 1e-5, "{r:?}");
        }
    }

    #[test]
    fn faulty_backward_is_caught() {
        let reports = run_scope(Scope::Ops, &[1], true);
        let faulty = reports.iter().find(|r| r.name == FAULTY_CASE).unwrap();
        assert!(!faulty.passed());
    }
}
