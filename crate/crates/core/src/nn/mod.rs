//! Dense tensors, a recording tape for reverse-mode gradients, the layers the
//! encoder and probe are built from, and their optimizers.
//!
//! A forward pass records onto a fresh [`Graph`]. Learnable values live in a
//! [`ParamStore`] and are bound into the graph by the layers through a [`Ctx`].
//! `f32` is the working precision; every op is generic over [`Real`] so the
//! gradient checks can run in `f64`.

mod checkpoint;
mod conv;
mod gradcheck;
mod graph;
mod layers;
mod ops;
mod optim;
mod params;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use gradcheck::{check_gradients, GradCheckOptions, GradCheckReport};
pub use graph::{Backward, BackwardFn, Gradients, Graph, Var};
pub use layers::{
    dropout, BatchNorm, Conv1d, Conv2d, Ctx, LayerNorm, Linear, MultiHeadAttention, TransformerBlock,
};
pub use optim::{adam_update, one_cycle_lr, Adam, AdamConfig};
pub use params::{init, AdamState, ParamId, ParamStore, Parameter};
pub use tensor::{gemm, numel, Real, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("batch norm needs at least 2 samples in train mode, got {0}")]
    BatchTooSmall(usize),
    #[error("backward needs a single-element output, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, NnError>;
