use thiserror::Error;
use tripcast::data::DataError;
use tripcast::explain::ExplainError;
use tripcast::ndcore::TensorError;
use tripcast::nn::{CheckpointError, NnError};
use tripcast::train::TrainError;

/// A failed command, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed invocation (exit 1).
    #[error("{0}")]
    Usage(String),
    /// Bad input data, configuration or checkpoint (exit 2).
    #[error("{0}")]
    Data(String),
    /// Non-finite values or a degenerate solve (exit 3).
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

fn tensor_is_numeric(e: &TensorError) -> bool {
    matches!(e, TensorError::Numeric(_))
}

fn nn_is_numeric(e: &NnError) -> bool {
    matches!(e, NnError::Tensor(t) if tensor_is_numeric(t))
}

fn classify(numeric: bool, message: String) -> CliError {
    if numeric {
        CliError::Numeric(message)
    } else {
        CliError::Data(message)
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        classify(nn_is_numeric(&e), e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let numeric = match &e {
            TrainError::Numeric(_) | TrainError::Domain { .. } => true,
            TrainError::Nn(n) => nn_is_numeric(n),
            TrainError::Tensor(t) => tensor_is_numeric(t),
            _ => false,
        };
        classify(numeric, e.to_string())
    }
}

impl From<ExplainError> for CliError {
    fn from(e: ExplainError) -> Self {
        let numeric = match &e {
            ExplainError::Degenerate(_) | ExplainError::Domain(_) => true,
            ExplainError::Nn(n) => nn_is_numeric(n),
            _ => false,
        };
        classify(numeric, e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
