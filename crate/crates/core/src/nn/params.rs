use std::rc::Rc;

use super::graph::{Graph, Var};
use super::tensor::{Real, Tensor};
use super::{NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct AdamState<T: Real> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(shape: &[usize]) -> Self {
        Self {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            step: 0,
        }
    }
}

/// A named tensor. Buffers (batch-norm running statistics) are parameters
/// with `trainable == false`: checkpointed but never optimized.
#[derive(Debug, Clone)]
pub struct Parameter<T: Real> {
    pub name: String,
    pub trainable: bool,
    /// Whether decoupled weight decay applies. Set for matrices and kernels.
    pub decay: bool,
    pub(crate) value: Rc<Tensor<T>>,
    pub adam: Option<AdamState<T>>,
}

impl<T: Real> Parameter<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Real = f32> {
    params: Vec<Parameter<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    fn push(&mut self, name: &str, value: Tensor<T>, trainable: bool) -> ParamId {
        debug_assert!(self.find(name).is_none(), "duplicate parameter {name}");
        let decay = trainable && value.ndim() >= 2;
        self.params.push(Parameter {
            name: name.to_string(),
            trainable,
            decay,
            value: Rc::new(value),
            adam: None,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>) -> ParamId {
        self.push(name, value, true)
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor<T>) -> ParamId {
        self.push(name, value, false)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    /// Mutable access to a value; copies only if a graph still holds it.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Rc::make_mut(&mut self.params[id.0].value)
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(NnError::Shape {
                op: "set parameter",
                lhs: p.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        p.value = Rc::new(value);
        Ok(())
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    pub fn bind(&self, graph: &Graph<T>, id: ParamId, track: bool) -> Var {
        let p = &self.params[id.0];
        graph.bind_param(id, Rc::clone(&p.value), track && p.trainable)
    }

    /// Same parameters in another precision, optimizer state dropped.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    trainable: p.trainable,
                    decay: p.decay,
                    value: Rc::new(p.value.cast()),
                    adam: None,
                })
                .collect(),
        }
    }

    /// Bitwise equality of all values.
    pub fn same_values(&self, other: &Self) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape() && {
                    a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits_u64() == y.to_bits_u64())
                })
    }
}

trait Bits {
    fn to_bits_u64(self) -> u64;
}

impl<T: Real> Bits for T {
    fn to_bits_u64(self) -> u64 {
        self.f64().to_bits()
    }
}

/// Weight initializers.
pub mod init {
    use super::super::tensor::{numel, Real, Tensor};
    use crate::rng::Rng;

    /// U(±1/√fan_in), the customary default for dense and convolutional weights.
    pub fn fan_in_uniform<T: Real>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor<T> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        Tensor::from_fn(shape, |_| T::lit(rng.uniform_range(-bound, bound)))
    }

    /// U(±√(6/fan_in)), variance-preserving through ReLU-like activations.
    pub fn he_uniform<T: Real>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor<T> {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        Tensor::from_fn(shape, |_| T::lit(rng.uniform_range(-bound, bound)))
    }

    /// Normal with standard deviation `std`, truncated at ±2σ.
    pub fn truncated_normal<T: Real>(shape: &[usize], std: f64, rng: &mut Rng) -> Tensor<T> {
        Tensor::from_fn(shape, |_| T::lit(rng.truncated_normal(std)))
    }

    pub fn zeros<T: Real>(shape: &[usize]) -> Tensor<T> {
        Tensor::zeros(shape)
    }

    pub fn ones<T: Real>(shape: &[usize]) -> Tensor<T> {
        Tensor::full(shape, T::one())
    }

    pub fn fan_in(shape: &[usize]) -> usize {
        numel(&shape[1..])
    }
}
