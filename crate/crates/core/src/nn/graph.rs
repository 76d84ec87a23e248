//! Tape of recorded operations and the reverse sweep over it.

use std::cell::RefCell;
use std::rc::Rc;

use super::params::ParamId;
use super::tensor::{Real, Tensor};
use super::{NnError, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// What a backward closure sees: parent values, the op output, the incoming
/// gradient and which parents actually need a gradient.
pub struct Backward<'a, T: Real> {
    pub inputs: Vec<Rc<Tensor<T>>>,
    pub output: &'a Tensor<T>,
    pub grad: &'a Tensor<T>,
    pub needs: Vec<bool>,
}

pub type BackwardFn<T> = Box<dyn Fn(&Backward<'_, T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T: Real> {
    value: Rc<Tensor<T>>,
    parents: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
    param: Option<ParamId>,
}

/// Single-use recording of a forward pass.
pub struct Graph<T: Real = f32> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_leaf(&self, value: Rc<Tensor<T>>, requires_grad: bool, param: Option<ParamId>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents: Vec::new(),
            requires_grad,
            backward: None,
            param,
        });
        Var(nodes.len() - 1)
    }

    /// Value that never receives a gradient.
    pub fn constant(&self, t: Tensor<T>) -> Var {
        self.push_leaf(Rc::new(t), false, None)
    }

    /// Leaf whose gradient is tracked (inputs under gradient check, etc.).
    pub fn input(&self, t: Tensor<T>) -> Var {
        self.push_leaf(Rc::new(t), true, None)
    }

    pub(crate) fn bind_param(&self, id: ParamId, value: Rc<Tensor<T>>, trainable: bool) -> Var {
        self.push_leaf(value, trainable, Some(id))
    }

    pub fn value(&self, v: Var) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Record an op output. Rejects non-finite results.
    pub fn record(&self, op: &'static str, parents: &[Var], value: Tensor<T>, backward: BackwardFn<T>) -> Result<Var> {
        if !value.is_finite() {
            return Err(NnError::NonFinite(op));
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = parents.iter().any(|p| nodes[p.0].requires_grad);
        nodes.push(Node {
            value: Rc::new(value),
            parents: parents.iter().map(|p| p.0).collect(),
            requires_grad,
            backward: requires_grad.then_some(backward),
            param: None,
        });
        Ok(Var(nodes.len() - 1))
    }

    /// Reverse sweep from a single-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let out = &nodes[output.0];
        if out.value.len() != 1 {
            return Err(NnError::NotScalar(out.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::full(out.value.shape(), T::one()));
        for i in (0..=output.0).rev() {
            let node = &nodes[i];
            let Some(backward) = node.backward.as_ref() else { continue };
            let Some(grad) = grads[i].take() else { continue };
            let ctx = Backward {
                inputs: node.parents.iter().map(|&p| Rc::clone(&nodes[p].value)).collect(),
                output: &node.value,
                grad: &grad,
                needs: node.parents.iter().map(|&p| nodes[p].requires_grad).collect(),
            };
            let parent_grads = backward(&ctx);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(pg.shape(), nodes[p].value.shape(), "gradient shape for node {p}");
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
            grads[i] = Some(grad);
        }
        let params = nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|id| (id, i)))
            .collect();
        Ok(Gradients { grads, params })
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, usize)>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients of every bound parameter leaf, in binding order.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> + '_ {
        self.params
            .iter()
            .filter_map(|&(id, i)| self.grads[i].as_ref().map(|g| (id, g)))
    }
}
