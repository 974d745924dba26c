use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{init_params, ModelConfig, ModelParams, NnError};
use crate::data::{DataConfig, NormStats};

/// Bumped whenever the stored layout changes.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint format_version {found}, this build reads {expected}")]
    Version { found: u32, expected: u32 },
    #[error("corrupted checkpoint: {0}")]
    Integrity(String),
    #[error("checkpoint JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// A trained model with everything needed to use it again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: ModelConfig,
    /// Preprocessing that produced the model's inputs; `capacity` is resolved.
    pub data: DataConfig,
    pub stats: NormStats,
    /// Parameters in canonical order (see [`ModelParams::named`]).
    pub params: Vec<NamedTensor>,
    /// Fully resolved run configuration that produced this model.
    pub run_config: serde_json::Value,
}

impl Checkpoint {
    pub fn new(
        model: &ModelConfig,
        params: &ModelParams,
        stats: NormStats,
        data: DataConfig,
        run_config: serde_json::Value,
    ) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            model: model.clone(),
            data,
            stats,
            params: params
                .named()
                .into_iter()
                .map(|(name, t)| NamedTensor {
                    name,
                    shape: t.shape().to_vec(),
                    values: t.values().to_vec(),
                })
                .collect(),
            run_config,
        }
    }

    /// Rebuilds the parameters, checking names, shapes and lengths
    /// against the stored model configuration.
    pub fn model_params(&self) -> Result<ModelParams, CheckpointError> {
        let mut params = init_params(&self.model, 0)?;
        let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
        if names.len() != self.params.len() {
            return Err(CheckpointError::Integrity(format!(
                "{} tensors stored, {} expected",
                self.params.len(),
                names.len()
            )));
        }
        for ((slot, name), stored) in params.tensors_mut().into_iter().zip(&names).zip(&self.params) {
            if &stored.name != name {
                return Err(CheckpointError::Integrity(format!(
                    "found `{}` where `{name}` belongs",
                    stored.name
                )));
            }
            if stored.shape != slot.shape() || stored.values.len() != slot.len() {
                return Err(CheckpointError::Integrity(format!(
                    "`{name}` has shape {:?} with {} values, expected {:?}",
                    stored.shape,
                    stored.values.len(),
                    slot.shape()
                )));
            }
            slot.values_mut().copy_from_slice(&stored.values);
        }
        params.norm = Some(self.stats);
        Ok(params)
    }

    pub fn to_json(&self) -> Result<String, CheckpointError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses a checkpoint, reporting a version mismatch before anything else.
    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        let found = raw
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| CheckpointError::Integrity("missing format_version".into()))?;
        if found != FORMAT_VERSION as u64 {
            return Err(CheckpointError::Version {
                found: found as u32,
                expected: FORMAT_VERSION,
            });
        }
        let ckpt: Checkpoint = serde_json::from_value(raw)?;
        ckpt.model_params()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
