//! LSTM forecasting models built on the [`crate::ndcore`] tape.

mod attention;
mod checkpoint;
mod config;
mod lstm;
mod model;
mod params;

pub use attention::{attention_forward, project_embed, AttentionOutput};
pub use checkpoint::{Checkpoint, CheckpointError, NamedTensor, FORMAT_VERSION};
pub use config::{AttentionSource, InputLayout, ModelConfig, Variant};
pub use lstm::{lstm_cell_forward, lstm_stack_forward, StackOutput, StepMask};
pub use model::{forward_batch, model_forward, predict, Batch, PREDICT_CHUNK};
pub use params::{
    glorot_limit, init_params, AttentionParams, BoundAttention, BoundBranch, BoundDense, BoundLstm, BoundParams,
    BranchParams, DenseParams, LstmLayerParams, ModelParams,
};

use crate::ndcore::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("sequence has no valid steps")]
    EmptySequence,
    #[error("sequence of {valid} steps exceeds capacity {capacity}")]
    Capacity { valid: usize, capacity: usize },
}
