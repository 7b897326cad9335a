//! Dense-tensor reverse-mode autodiff and the Adam optimizer.

pub mod gradcheck;
pub mod kernels;
pub mod optim;
pub mod tape;
pub mod tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("shape error in {op}: {msg}")]
    Shape { op: &'static str, msg: String },
    #[error("non-finite values produced by {op}")]
    NonFinite { op: &'static str },
    #[error("{0}")]
    Contract(String),
}

pub use gradcheck::finite_difference_check;
pub use optim::{adam_step, AdamConfig, AdamState};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;
