//! Tensors, reverse-mode differentiation and the Adam optimizer.

mod adam;
mod gradcheck;
mod graph;
mod mlp;
mod params;
mod tensor;

use thiserror::Error;

pub use adam::AdamState;
pub use gradcheck::{grad_check, GradCheck};
pub use graph::{Gradients, Graph, Var};
pub use mlp::{bind_mlp, Activation, MlpSpec, OutputSquash};
pub use params::{fan_in_uniform, uniform, ParamEntry, ParamSet};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch at {node}: {detail}")]
    Shape { node: String, detail: String },
    #[error("backward seed must be scalar, got shape {shape:?}")]
    NonScalarSeed { shape: Vec<usize> },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
