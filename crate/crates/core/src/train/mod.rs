//! Losses, optimizers, the prediction-error metric, the two training
//! regimes and hyperparameter grid search.

mod fit;
mod grid;
mod loss;
mod metric;
mod optim;

pub use fit::{
    cross_validate_transfer, evaluate, train_fixed_split, CrossValConfig, EpochRecord, EvalReport, Splits, TrainConfig,
    TrainOutcome,
};
pub use grid::{grid_search, GridResult, GridSpec, GridValue, Hyper, RangeSpec, TrialResult, TrialSetup};
pub use loss::{loss, loss_grad, LossKind};
pub use metric::{persistence_predictions, prediction_error, target_errors, TargetErrors};
pub use optim::{optimizer_step, OptimizerKind, OptimizerState};

use crate::data::DataError;
use crate::ndcore::TensorError;
use crate::nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("{kind} loss outside its domain: {message}")]
    Domain { kind: LossKind, message: String },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("prediction error undefined: {0}")]
    Metric(String),
    #[error("test samples leak into the training pool: {0}")]
    Leakage(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T> = std::result::Result<T, TrainError>;
