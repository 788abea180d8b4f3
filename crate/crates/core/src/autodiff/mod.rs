//! Minimal reverse-mode automatic differentiation over dense `f64` tensors,
//! plus the recurrent cell and optimizer the networks are trained with.

mod graph;
mod lstm;
mod optim;
mod params;
mod tensor;

pub use graph::{Conv2dSpec, Gradients, Graph, Var, UNIT_NORM_EPS};
pub use lstm::{lstm_cell_step, LstmParams};
pub use optim::{Adam, AdamConfig};
pub use params::{xavier_uniform, ParamId, ParamStore};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
    #[error("backward called before any forward pass")]
    EmptyGraph,
    #[error("node {0} is not on this graph")]
    UnknownNode(usize),
    #[error("loss must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
}
