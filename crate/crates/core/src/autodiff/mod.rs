//! Dense tensors and a define-by-run reverse-mode differentiation tape.
//!
//! Everything is `f64`. A [`Tape`] is rebuilt for every forward pass; model
//! parameters live in a [`ParamStore`] and enter the tape through
//! [`Tape::param`], so [`Tape::backward_into`] can route gradients back to
//! their slots.

mod optim;
mod params;
mod tape;
mod tensor;

use thiserror::Error;

pub use optim::{adam_update, AdamConfig, FlatOptimizer, Optimizer};
pub use params::ParamStore;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{matmul, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("non-finite value produced by {0}")]
    NonFiniteValue(&'static str),
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("duplicate parameter slot {0}")]
    DuplicateSlot(String),
    #[error("missing parameter slot {0}")]
    MissingSlot(String),
    #[error("malformed parameter container: {0}")]
    Format(String),
}
