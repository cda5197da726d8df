//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use tape::{Axis, Gradients, Primitive, Tape, TapeRecord, Var};
pub use tensor::Tensor;


use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("dimension error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("unsupported primitive `{0}`")]
    Unsupported(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("backward called on an empty tape")]
    EmptyTape,
    #[error("non-finite value in parameter {param}, entry {index}")]
    NonFinite { param: usize, index: usize },
}
