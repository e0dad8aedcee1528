//! Rationale generators, the shared predictor, and mask sampling.

mod checkpoint;
mod gru;
mod mgr;
mod sampling;

use thiserror::Error;

use crate::data::DataError;
use crate::numeric::NumericError;

pub use checkpoint::{
    load_checkpoint, parse_checkpoint, save_checkpoint, write_checkpoint, Checkpoint,
};
pub use gru::{BiGru, GruCell};
pub use mgr::{
    apply_mask, generator_forward, mgr_forward, pipeline_grad_check, predictor_forward,
    GeneratorParams, GeneratorPass, MgrModel, ModelConfig, Pooling, PredictorParams,
    SamplingStreams,
};
pub use sampling::{sample_mask, MaskColumn, MaskSample, SampleMode};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("temperature must be positive and finite, got {0}")]
    Temperature(f64),
    #[error("probability at index {index} is {value}, outside [0, 1]")]
    Probability { index: usize, value: f64 },
    #[error("mask has {mask} entries for {tokens} tokens")]
    LengthMismatch { tokens: usize, mask: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("token id {id} outside vocabulary of size {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error("label {0} outside the configured classes")]
    LabelOutOfRange(usize),
    #[error("no generator with index {0}")]
    GeneratorIndex(usize),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Data(#[from] DataError),
}
