//! Dense `f64` arrays, a reverse-mode tape, Adam, and gradient checking.

mod adam;
pub mod gradcheck;
mod params;
mod tape;
mod tensor;
mod verify;

pub use adam::{adam_step, Adam, AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, ParamCheck};
pub use params::{Gradients, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
pub use verify::{check_primitives, primitive_names};

pub(crate) use tape::sigmoid_scalar;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NumericError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("rows have different lengths")]
    RaggedRows,
    #[error("expected a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("{0}: empty input")]
    EmptyInput(&'static str),
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("column slice {start}..{end} out of range for shape {shape:?}")]
    SliceOutOfRange {
        shape: Vec<usize>,
        start: usize,
        end: usize,
    },
    #[error("non-finite value in {context} at index {index}")]
    NonFinite { context: String, index: usize },
    #[error("gradient for `{0}` was not zeroed before backward")]
    StaleGradient(String),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
}
