//! Reverse-mode differentiation tape.
//!
//! Ops append a node holding their output value, the handles of their inputs,
//! and a backward closure mapping the output gradient to one optional gradient
//! per input. [`Tape::backward`] walks the nodes in reverse insertion order,
//! which is a valid reverse topological order because inputs always precede
//! their consumers. Gradients from multiple consumers are summed.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::tensor::{Element, Shape, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// What a backward closure sees: input values, the output value, and which
/// inputs actually need a gradient.
pub struct Ctx<'a, T> {
    inputs: Vec<&'a Tensor<T>>,
    needs: Vec<bool>,
    output: &'a Tensor<T>,
}

impl<'a, T> Ctx<'a, T> {
    pub fn input(&self, i: usize) -> &'a Tensor<T> {
        self.inputs[i]
    }

    pub fn needs(&self, i: usize) -> bool {
        self.needs[i]
    }

    pub fn output(&self) -> &'a Tensor<T> {
        self.output
    }
}

pub type Grads<T> = Vec<Option<Tensor<T>>>;
pub type BackwardFn<T> = Box<dyn Fn(&Ctx<'_, T>, &Tensor<T>) -> Grads<T>>;

struct Node<T> {
    value: Tensor<T>,
    inputs: Vec<Var>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
    param: Option<ParamId>,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_leaf(&mut self, value: Tensor<T>, requires_grad: bool, param: Option<ParamId>) -> Var {
        self.nodes.push(Node {
            value,
            inputs: Vec::new(),
            backward: None,
            requires_grad,
            param,
        });
        Var(self.nodes.len() - 1)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, false, None)
    }

    /// A free input that receives a gradient (used by tests and gradient checks).
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, true, None)
    }

    /// Bind a stored parameter; repeated calls return the same handle.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push_leaf(store.get(id).value.clone(), true, Some(id));
        self.params.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Record an op. `backward` must return exactly one entry per input.
    pub fn push_op(&mut self, value: Tensor<T>, inputs: &[Var], backward: BackwardFn<T>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let backward = requires_grad.then_some(backward);
        self.nodes.push(Node {
            value,
            inputs: inputs.to_vec(),
            backward,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Gradients of the scalar `loss` with respect to every node that requires one.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let loss_shape = self.shape(loss);
        if loss_shape.numel() != 1 {
            return Err(Error::Shape(format!(
                "backward from non-scalar of shape {loss_shape}"
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(loss_shape));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let ctx = Ctx {
                inputs: node.inputs.iter().map(|v| &self.nodes[v.0].value).collect(),
                needs: node
                    .inputs
                    .iter()
                    .map(|v| self.nodes[v.0].requires_grad)
                    .collect(),
                output: &node.value,
            };
            let input_grads = backward(&ctx, &grad);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for (input, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(g.shape(), self.nodes[input.0].value.shape());
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|p| (p, Var(i))))
            .collect();
        Ok(Gradients { grads, params })
    }
}

pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of a leaf; `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    /// Add parameter gradients into the store's grad slots. Returns the ids of
    /// parameters that received a gradient.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) -> Vec<ParamId> {
        let mut touched = Vec::new();
        for &(id, var) in &self.params {
            if let Some(g) = &self.grads[var.0] {
                store.get_mut(id).grad.add_assign(g);
                touched.push(id);
            }
        }
        touched.sort();
        touched
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn shared_input_accumulates() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor::from_vec(Shape::tokens(1, 2), vec![1.0, 2.0]).unwrap());
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let c = tape.constant(Tensor::ones(Shape::scalar()));
        let x = tape.input(Tensor::scalar(3.0));
        let y = tape.mul(x, c).unwrap();
        let grads = tape.backward(y).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().item(), 1.0);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::<f32>::new();
        let x = tape.input(Tensor::ones(Shape::tokens(2, 2)));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn params_bind_once_and_accumulate() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("p", Tensor::scalar(2.0)).unwrap();
        for _ in 0..2 {
            let mut tape = Tape::new();
            let a = tape.param(&store, id);
            let b = tape.param(&store, id);
            assert_eq!(a, b);
            let y = tape.mul(a, b).unwrap();
            let grads = tape.backward(y).unwrap();
            assert_eq!(grads.accumulate_into(&mut store), vec![id]);
        }
        assert_eq!(store.get(id).grad.item(), 8.0);
    }
}
