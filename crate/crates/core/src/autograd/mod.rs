//! Dense `f64` tensors, a reverse-mode gradient tape and the Adam optimizer.

mod adam;
pub mod gradcheck;
mod graph;
mod tensor;

pub use adam::{AdamConfig, AdamState, OptimError};
pub use graph::{bce_value, sigmoid, Gradients, Graph, NodeId, ParamId, Unary, LOG_CLAMP};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("matmul dimension mismatch: {left:?} x {right:?}")]
    MatMul { left: Vec<usize>, right: Vec<usize> },
    #[error("shapes {left:?} and {right:?} do not broadcast")]
    Broadcast { left: Vec<usize>, right: Vec<usize> },
    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },
    #[error("cannot concatenate shapes {shapes:?}")]
    Concat { shapes: Vec<Vec<usize>> },
    #[error("axis {axis} invalid for shape {shape:?}")]
    Axis { axis: usize, shape: Vec<usize> },
    #[error("reduction over empty axis {axis}")]
    EmptyAxis { axis: usize },
    #[error("conv1d: input {input:?} incompatible with filters {filters:?} at window {window}")]
    Conv {
        input: Vec<usize>,
        filters: Vec<usize>,
        window: usize,
    },
    #[error("window {window} larger than padded input length {padded}")]
    Window { window: usize, padded: usize },
    #[error("mask length {got} does not match {expected} columns")]
    Mask { expected: usize, got: usize },
    #[error("backward requires a one-element loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
}
