//! Minimal dense tensor kernel with tape-based reverse-mode differentiation
//! and an Adam optimizer.

mod adam;
mod graph;
pub mod gradcheck;
pub mod kernels;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use graph::{Gradients, Graph, Var};
pub use tensor::{Real, Tensor};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: index {index} out of bounds for {bound}")]
    IndexOutOfBounds { op: &'static str, index: usize, bound: usize },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("graph was already differentiated")]
    BackwardTwice,
    #[error("{0}")]
    Contract(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
