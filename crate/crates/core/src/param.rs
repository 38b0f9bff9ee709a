//! Named trainable parameters.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Element, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Insertion-ordered collection of uniquely named parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        let id = self.params.len();
        self.by_name.insert(name.clone(), id);
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter { name, value, grad });
        Ok(ParamId(id))
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total scalar count over all parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Parameters whose name starts with `prefix`.
    pub fn with_prefix<'a>(
        &'a self,
        prefix: &'a str,
    ) -> impl Iterator<Item = &'a Parameter<T>> + 'a {
        self.params
            .iter()
            .filter(move |p| p.name.starts_with(prefix))
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for p in &self.params {
            out.add(p.name.clone(), p.value.cast())
                .expect("names already unique");
        }
        out
    }

    /// Replace values from another store with identical names and shapes.
    pub fn load_values(&mut self, other: &ParamStore<T>) -> Result<()> {
        for p in &self.params {
            let src = other
                .by_name(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {:?}", p.name)))?;
            if src.value.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {:?} has shape {}, model expects {}",
                    p.name,
                    src.value.shape(),
                    p.value.shape()
                )));
            }
        }
        if let Some(extra) = other.params.iter().find(|p| self.id(&p.name).is_none()) {
            return Err(Error::Checkpoint(format!(
                "unexpected tensor {:?} not present in the model",
                extra.name
            )));
        }
        for p in &mut self.params {
            p.value = other.by_name(&p.name).expect("checked above").value.clone();
        }
        Ok(())
    }
}

/// Builds parameters under a dotted name prefix.
pub struct ParamBuilder<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut Rng,
    prefix: String,
}

impl<'a, T: Element> ParamBuilder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut Rng) -> Self {
        ParamBuilder {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn name(&self, leaf: &str) -> String {
        if self.prefix.is_empty() {
            leaf.to_string()
        } else {
            format!("{}.{leaf}", self.prefix)
        }
    }

    /// Run `f` with `segment` appended to the name prefix.
    pub fn scope<R>(&mut self, segment: &str, f: impl FnOnce(&mut Self) -> R) -> R {
        let saved = self.prefix.clone();
        self.prefix = self.name(segment);
        let out = f(self);
        self.prefix = saved;
        out
    }

    pub fn add(&mut self, leaf: &str, value: Tensor<T>) -> Result<ParamId> {
        let name = self.name(leaf);
        self.store.add(name, value)
    }

    pub fn normal(&mut self, leaf: &str, shape: Shape, std: f64) -> Result<ParamId> {
        let value = self.rng.normal_tensor(shape, std);
        self.add(leaf, value)
    }

    pub fn uniform(&mut self, leaf: &str, shape: Shape, bound: f64) -> Result<ParamId> {
        let value = self.rng.uniform_tensor(shape, -bound, bound);
        self.add(leaf, value)
    }

    pub fn zeros(&mut self, leaf: &str, shape: Shape) -> Result<ParamId> {
        self.add(leaf, Tensor::zeros(shape))
    }

    pub fn ones(&mut self, leaf: &str, shape: Shape) -> Result<ParamId> {
        self.add(leaf, Tensor::ones(shape))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut store = ParamStore::<f32>::new();
        store
            .add("a.weight", Tensor::zeros(Shape::scalar()))
            .unwrap();
        assert!(store
            .add("a.weight", Tensor::zeros(Shape::scalar()))
            .is_err());
    }

    #[test]
    fn builder_scopes_names() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = Rng::new(0);
        let mut b = ParamBuilder::new(&mut store, &mut rng);
        b.scope("enc", |b| {
            b.scope("stem", |b| {
                b.zeros("weight", Shape::new(2, 3, 3, 3)).unwrap()
            });
        });
        b.ones("head.bias", Shape::tokens(1, 4)).unwrap();
        let names: Vec<_> = store.iter().map(|(_, p)| p.name.clone()).collect();
        assert_eq!(names, ["enc.stem.weight", "head.bias"]);
        assert_eq!(store.get(ParamId(0)).grad.shape(), Shape::new(2, 3, 3, 3));
    }
}
