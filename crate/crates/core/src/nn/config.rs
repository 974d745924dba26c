use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::NnError;
use crate::data::{FEATURE_COUNT, WEEKDAY_OFFSET};

/// The four forecasting architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// One 3-layer LSTM stack over all features, linear head.
    Pm1,
    /// Parallel stacks for (Δt, weekday) and (d, weekday), linear head.
    Pm2,
    /// PM1 stack plus one attention head, relu/sigmoid head.
    Pm3,
    /// PM2 branches, each with its own attention head, relu/sigmoid head.
    Pm4,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Pm1, Variant::Pm2, Variant::Pm3, Variant::Pm4];

    pub fn branches(self) -> usize {
        match self {
            Variant::Pm1 | Variant::Pm3 => 1,
            Variant::Pm2 | Variant::Pm4 => 2,
        }
    }

    pub fn has_attention(self) -> bool {
        matches!(self, Variant::Pm3 | Variant::Pm4)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::Pm1 => "pm1",
            Variant::Pm2 => "pm2",
            Variant::Pm3 => "pm3",
            Variant::Pm4 => "pm4",
        };
        f.write_str(s)
    }
}

impl FromStr for Variant {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pm1" => Ok(Variant::Pm1),
            "pm2" => Ok(Variant::Pm2),
            "pm3" => Ok(Variant::Pm3),
            "pm4" => Ok(Variant::Pm4),
            other => Err(NnError::Config(format!("unknown variant `{other}`"))),
        }
    }
}

/// Which LSTM states the attention head reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionSource {
    /// States of every stacked layer, concatenated per step.
    #[default]
    AllLayers,
    /// Top layer states only.
    TopLayer,
}

/// Column positions of the per-step features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputLayout {
    pub width: usize,
    pub delta_t: usize,
    pub distance: usize,
    pub weekday_start: usize,
    pub weekday_len: usize,
}

impl Default for InputLayout {
    fn default() -> Self {
        Self {
            width: FEATURE_COUNT,
            delta_t: 0,
            distance: 1,
            weekday_start: WEEKDAY_OFFSET,
            weekday_len: 7,
        }
    }
}

impl InputLayout {
    fn weekday(&self) -> impl Iterator<Item = usize> {
        self.weekday_start..self.weekday_start + self.weekday_len
    }

    /// Columns read by each branch of `variant`. Weekday goes to both
    /// branches of the parallel variants.
    pub fn branch_columns(&self, variant: Variant) -> Vec<Vec<usize>> {
        match variant.branches() {
            1 => vec![(0..self.width).collect()],
            _ => vec![
                std::iter::once(self.delta_t).chain(self.weekday()).collect(),
                std::iter::once(self.distance).chain(self.weekday()).collect(),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub lstm_layer_sizes: Vec<usize>,
    /// Aspect embedding width `k_a` (attention variants only).
    pub attention_size: usize,
    /// Widths of the fully connected layers; the last one is the 2-wide output.
    pub fc_sizes: Vec<usize>,
    /// Padding capacity `L`.
    pub max_seq_len: usize,
    pub input_layout: InputLayout,
    pub attention_source: AttentionSource,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::best(Variant::Pm4)
    }
}

impl ModelConfig {
    pub const OUTPUTS: usize = 2;

    /// Best architecture values reported for each variant.
    pub fn best(variant: Variant) -> Self {
        let lstm_layer_sizes = match variant {
            Variant::Pm1 => vec![60, 120, 60],
            Variant::Pm2 | Variant::Pm4 => vec![40, 60, 40],
            Variant::Pm3 => vec![60, 90, 60],
        };
        Self {
            variant,
            lstm_layer_sizes,
            attention_size: 64,
            fc_sizes: vec![64, Self::OUTPUTS],
            max_seq_len: 32,
            input_layout: InputLayout::default(),
            attention_source: AttentionSource::AllLayers,
        }
    }

    /// Small model used by gradient and masking checks.
    pub fn tiny(variant: Variant) -> Self {
        Self {
            variant,
            lstm_layer_sizes: vec![4, 6, 4],
            attention_size: 8,
            fc_sizes: vec![8, Self::OUTPUTS],
            max_seq_len: 6,
            ..Self::best(variant)
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: String| Err(NnError::Config(m));
        if !(1..=5).contains(&self.lstm_layer_sizes.len()) {
            return bad(format!("{} LSTM layers; 1 to 5 supported", self.lstm_layer_sizes.len()));
        }
        if self.lstm_layer_sizes.contains(&0) {
            return bad("LSTM layer width must be positive".into());
        }
        if !(1..=3).contains(&self.fc_sizes.len()) {
            return bad(format!("{} FC layers; 1 to 3 supported", self.fc_sizes.len()));
        }
        if self.fc_sizes.last() != Some(&Self::OUTPUTS) || self.fc_sizes.contains(&0) {
            return bad(format!("fc_sizes must be positive and end with {}", Self::OUTPUTS));
        }
        if self.variant.has_attention() && self.attention_size == 0 {
            return bad("attention_size must be positive".into());
        }
        if self.max_seq_len == 0 {
            return bad("max_seq_len must be positive".into());
        }
        let l = &self.input_layout;
        if l.weekday_start + l.weekday_len > l.width || l.delta_t >= l.width || l.distance >= l.width {
            return bad("input layout columns out of range".into());
        }
        Ok(())
    }

    pub fn top_size(&self) -> usize {
        *self.lstm_layer_sizes.last().expect("validated")
    }

    /// Row count `k` of the state matrix fed to attention.
    pub fn attention_state_size(&self) -> usize {
        match self.attention_source {
            AttentionSource::AllLayers => self.lstm_layer_sizes.iter().sum(),
            AttentionSource::TopLayer => self.top_size(),
        }
    }

    pub fn branch_input_sizes(&self) -> Vec<usize> {
        self.input_layout
            .branch_columns(self.variant)
            .iter()
            .map(Vec::len)
            .collect()
    }

    /// Width of the concatenated vector entering the first FC layer.
    pub fn head_input_size(&self) -> usize {
        let per_branch = if self.variant.has_attention() {
            self.attention_state_size() + self.top_size()
        } else {
            self.top_size()
        };
        per_branch * self.variant.branches()
    }
}
