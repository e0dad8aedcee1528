//! Objective, separate-rate optimization, the training loop, skew
//! pretraining and one-generator inference.

mod config;
mod objective;
mod trainer;

use thiserror::Error;

pub use config::{LrSchedule, TrainConfig};
pub use objective::{mgr_loss, omega, LossDiagnostics};
pub use trainer::{
    dev_metrics, infer, metrics_csv, param_groups, predict_split, predictor_accuracy,
    skew_pretrain, train_loop, train_loop_with, train_step, EarlyStopping, EpochRecord,
    SplitPredictions, TrainOutcome, TrainState,
};

use crate::data::DataError;
use crate::evaluation::EvalError;
use crate::models::ModelError;
use crate::numeric::NumericError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config field `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("mask length must be positive")]
    EmptyMask,
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite {component}: {value}")]
    NonFinite { component: String, value: f64 },
    #[error("diverged at epoch {epoch}, step {step}: {reason}")]
    Diverged {
        epoch: usize,
        step: usize,
        reason: String,
        last_good: Box<TrainOutcome>,
    },
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}
