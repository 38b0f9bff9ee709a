//! Adam with bias correction and coupled L2 weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 5e-4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    /// First moments, index-aligned with the parameter store.
    pub m: Vec<Tensor<T>>,
    /// Second moments.
    pub v: Vec<Tensor<T>>,
}

impl<T: Element> AdamState<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, p)| Tensor::zeros(p.value.shape()))
                .collect()
        };
        AdamState {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update of the parameters listed in `active` (or all when `None`).
    /// Parameters outside `active` keep their values and moments. A
    /// non-finite gradient aborts the step before anything is modified.
    pub fn step(&mut self, store: &mut ParamStore<T>, active: Option<&[ParamId]>) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::Config(format!(
                "optimizer tracks {} tensors, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        let ids: Vec<ParamId> = match active {
            Some(ids) => ids.to_vec(),
            None => store.ids().collect(),
        };
        for &id in &ids {
            let p = store.get(id);
            if !p.grad.all_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient of parameter {:?}",
                    p.name
                )));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - c.beta1), T::from_f64(1.0 - c.beta2));
        let wd = T::from_f64(c.weight_decay);
        let step_size = T::from_f64(c.lr / bc1);
        let inv_sqrt_bc2 = T::from_f64(1.0 / bc2.sqrt());
        let eps = T::from_f64(c.eps);
        for id in ids {
            let i = id.index();
            let p = store.get_mut(id);
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (((w, &g), m), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(p.grad.data())
                .zip(m)
                .zip(v)
            {
                let g = g + wd * *w;
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                *w = *w - step_size * *m / (v.sqrt() * inv_sqrt_bc2 + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn scalar_store(v: f64) -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("theta", Tensor::scalar(v)).unwrap();
        (s, id)
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut store = ParamStore::<f32>::new();
        store
            .add("w", Tensor::full(Shape::new(2, 3, 1, 1), 0.7))
            .unwrap();
        let before = store.by_name("w").unwrap().value.clone();
        let mut opt = AdamState::new(
            AdamConfig {
                weight_decay: 0.0,
                ..Default::default()
            },
            &store,
        );
        for _ in 0..5 {
            opt.step(&mut store, None).unwrap();
        }
        assert_eq!(store.by_name("w").unwrap().value, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut store, id) = scalar_store(1.0);
        store.get_mut(id).grad = Tensor::scalar(0.37);
        let mut opt = AdamState::new(
            AdamConfig {
                weight_decay: 0.0,
                ..Default::default()
            },
            &store,
        );
        opt.step(&mut store, None).unwrap();
        let moved = 1.0 - store.get(id).value.item();
        assert!((moved - 1e-4).abs() < 1e-9, "moved {moved}");
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let (mut store, id) = scalar_store(1.0);
        store.get_mut(id).grad = Tensor::scalar(f64::NAN);
        let mut opt = AdamState::new(AdamConfig::default(), &store);
        let err = opt.step(&mut store, None).unwrap_err().to_string();
        assert!(err.contains("theta"), "{err}");
        assert_eq!(opt.step, 0);
        assert_eq!(store.get(id).value.item(), 1.0);
    }

    #[test]
    fn inactive_parameters_are_untouched() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", Tensor::scalar(1.0)).unwrap();
        let b = store.add("b", Tensor::scalar(1.0)).unwrap();
        store.get_mut(a).grad = Tensor::scalar(1.0);
        store.get_mut(b).grad = Tensor::scalar(1.0);
        let mut opt = AdamState::new(AdamConfig::default(), &store);
        opt.step(&mut store, Some(&[a])).unwrap();
        assert_ne!(store.get(a).value.item(), 1.0);
        assert_eq!(store.get(b).value.item(), 1.0);
        assert_eq!(opt.m[b.index()].item(), 0.0);
    }

    /// Plain scalar Adam recurrence written out independently.
    fn scalar_adam_oracle(steps: usize, lr: f64) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.99f64, 1e-8);
        let (mut th, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=steps {
            let g = 2.0 * (th - 3.0);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            th -= lr * mh / (vh.sqrt() + eps);
        }
        th
    }

    #[test]
    fn descends_quadratic() {
        let (mut store, id) = scalar_store(0.0);
        let mut opt = AdamState::new(
            AdamConfig {
                lr: 0.1,
                weight_decay: 0.0,
                ..Default::default()
            },
            &store,
        );
        for _ in 0..200 {
            let th = store.get(id).value.item();
            store.get_mut(id).grad = Tensor::scalar(2.0 * (th - 3.0));
            opt.step(&mut store, None).unwrap();
        }
        let th = store.get(id).value.item();
        let oracle = scalar_adam_oracle(200, 0.1);
        assert!((oracle - 3.0).abs() < 0.1, "oracle ended at {oracle}");
        assert!((th - oracle).abs() < 1e-9, "adam {th} vs oracle {oracle}");
        assert!((th - 3.0).abs() < 0.1);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let (mut store, id) = scalar_store(0.5);
            let mut opt = AdamState::new(AdamConfig::default(), &store);
            for k in 0..20 {
                store.get_mut(id).grad = Tensor::scalar((k as f64).sin());
                opt.step(&mut store, None).unwrap();
            }
            store.get(id).value.item().to_bits()
        };
        assert_eq!(run(), run());
    }
}
