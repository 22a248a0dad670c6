//! Dense `f64` tensors, a reverse-mode tape, and momentum SGD.
//!
//! The primitive set is closed: matmul, broadcasting add/sub/mul, scaling,
//! elementwise `ln`/`exp`/`sigmoid`/`log_sigmoid`/`relu`/`tanh`, row-wise
//! softmax and log-softmax, sum/mean/row-sum reductions, column
//! concatenation, embedding lookup (`gather`) and per-row element
//! selection (`pick`). Every op checks operand shapes and rejects
//! non-finite results.

mod graph;
mod sgd;
mod tensor;

pub use graph::{Gradients, Graph, ParamEntry, ParamId, ParamStore, Var};
pub use sgd::{Direction, Sgd, SgdConfig, StepInfo};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: [usize; 2], rhs: [usize; 2] },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("expected a scalar, got shape {shape:?}")]
    NotScalar { shape: [usize; 2] },
    #[error("index {index} out of range for {op} (len {len})")]
    IndexOutOfRange { op: &'static str, index: usize, len: usize },
    #[error("empty operand for {op}")]
    Empty { op: &'static str },
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
}
