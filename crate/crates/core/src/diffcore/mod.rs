//! Dense `f64` tensors with reverse-mode differentiation, a central-difference
//! gradient checker and the Adam optimizer.
//!
//! Only the operations the forecasting network needs are provided. Values
//! are recorded on a [`Tape`]; gradients come back from [`Tape::backward`].

pub mod adam;
pub mod archive;
pub mod gradcheck;
mod kernels;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, grad_check_many, relative_error, GradCheckReport};
pub use tape::{BatchStats, Gradients, Mask, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}
