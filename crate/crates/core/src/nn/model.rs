use super::attention::attend;
use super::lstm::{broadcast_cols, run_stack, StepMask};
use super::{AttentionSource, BoundParams, ModelConfig, ModelParams, NnError, Variant};
use crate::data::{SequenceSample, FEATURE_COUNT};
use crate::ndcore::{Tape, Tensor, Var};

/// Samples evaluated per tape by [`predict`].
pub const PREDICT_CHUNK: usize = 256;

/// Samples laid out for one batched forward pass: one column per sample,
/// one input matrix per branch and step.
#[derive(Debug, Clone)]
pub struct Batch {
    pub size: usize,
    /// `inputs[branch][step]`, `branch width × size`.
    pub inputs: Vec<Vec<Tensor>>,
    pub masks: Vec<StepMask>,
}

impl Batch {
    pub fn new(config: &ModelConfig, samples: &[&SequenceSample]) -> Result<Self, NnError> {
        if samples.is_empty() {
            return Err(NnError::Config("empty batch".into()));
        }
        if config.input_layout.width != FEATURE_COUNT {
            return Err(NnError::Config(format!(
                "input width {} does not match {FEATURE_COUNT} sample columns",
                config.input_layout.width
            )));
        }
        let mut steps = 0;
        for s in samples {
            if s.valid_len == 0 {
                return Err(NnError::EmptySequence);
            }
            if s.valid_len > config.max_seq_len {
                return Err(NnError::Capacity {
                    valid: s.valid_len,
                    capacity: config.max_seq_len,
                });
            }
            steps = steps.max(s.valid_len);
        }
        let size = samples.len();
        let columns = config.input_layout.branch_columns(config.variant);
        let inputs = columns
            .iter()
            .map(|cols| {
                (0..steps)
                    .map(|t| {
                        let mut values = vec![0.0; cols.len() * size];
                        for (j, s) in samples.iter().enumerate() {
                            if t < s.valid_len {
                                let row = s.row(t);
                                for (i, &c) in cols.iter().enumerate() {
                                    values[i * size + j] = row[c];
                                }
                            }
                        }
                        Tensor::new(vec![cols.len(), size], values).expect("shape")
                    })
                    .collect()
            })
            .collect();
        let masks = (0..steps)
            .map(|t| {
                let flags: Vec<bool> = samples.iter().map(|s| t < s.valid_len).collect();
                StepMask::from_flags(&flags)
            })
            .collect();
        Ok(Self { size, inputs, masks })
    }
}

/// Forward pass of a batch; returns the `2 × B` prediction matrix.
pub fn forward_batch(
    tape: &mut Tape,
    config: &ModelConfig,
    params: &BoundParams,
    batch: &Batch,
) -> Result<Var, NnError> {
    let variant = config.variant;
    if params.branches.len() != variant.branches() || batch.inputs.len() != variant.branches() {
        return Err(NnError::Config(format!(
            "{variant} expects {} branches",
            variant.branches()
        )));
    }
    if params.fc.len() != config.fc_sizes.len() {
        return Err(NnError::Config("FC layer count differs from configuration".into()));
    }
    let mut attended = Vec::new();
    let mut finals = Vec::new();
    for (branch, inputs) in params.branches.iter().zip(&batch.inputs) {
        let inputs: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        let stack = run_stack(tape, &branch.layers, &inputs, &batch.masks)?;
        let top_last = *stack.last.last().expect("at least one layer");
        match (&branch.attention, variant.has_attention()) {
            (Some(att), true) => {
                let (states, h_last) = match config.attention_source {
                    AttentionSource::TopLayer => (stack.states.last().expect("layer").clone(), top_last),
                    AttentionSource::AllLayers => {
                        let states = (0..inputs.len())
                            .map(|t| {
                                let per_layer: Vec<Var> = stack.states.iter().map(|l| l[t]).collect();
                                tape.concat(&per_layer, 0)
                            })
                            .collect::<Result<Vec<_>, _>>()?;
                        (states, tape.concat(&stack.last, 0)?)
                    }
                };
                let out = attend(tape, att, &states, &batch.masks, h_last)?;
                attended.push(out.h_star);
            }
            (None, false) => {}
            _ => return Err(NnError::Config(format!("attention parameters do not match {variant}"))),
        }
        finals.push(top_last);
    }
    // attention outputs of every branch first, then final top-layer states
    attended.extend(finals);
    let mut x = tape.concat(&attended, 0)?;
    let n_fc = params.fc.len();
    for (j, dense) in params.fc.iter().enumerate() {
        let wx = tape.matmul(dense.weight, x)?;
        let bias = broadcast_cols(tape, dense.bias, batch.size)?;
        let z = tape.add(wx, bias)?;
        x = match (variant, j + 1 == n_fc) {
            (Variant::Pm1 | Variant::Pm2, _) => z,
            (_, false) => tape.relu(z),
            (_, true) => tape.sigmoid(z),
        };
    }
    Ok(x)
}

/// Prediction for a single sample.
pub fn model_forward(config: &ModelConfig, params: &ModelParams, sample: &SequenceSample) -> Result<[f64; 2], NnError> {
    Ok(predict(config, params, std::slice::from_ref(sample))?[0])
}

/// Normalized `(Δt, d)` predictions, one per sample. Samples are batched
/// by length to keep padding small.
pub fn predict(
    config: &ModelConfig,
    params: &ModelParams,
    samples: &[SequenceSample],
) -> Result<Vec<[f64; 2]>, NnError> {
    let mut by_len: Vec<usize> = (0..samples.len()).collect();
    by_len.sort_by_key(|&i| samples[i].valid_len);
    let mut out = vec![[0.0; 2]; samples.len()];
    for chunk in by_len.chunks(PREDICT_CHUNK) {
        let refs: Vec<&SequenceSample> = chunk.iter().map(|&i| &samples[i]).collect();
        let batch = Batch::new(config, &refs)?;
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let y = forward_batch(&mut tape, config, &bound, &batch)?;
        let v = tape.value(y).values();
        let b = batch.size;
        for (j, &i) in chunk.iter().enumerate() {
            out[i] = [v[j], v[b + j]];
        }
    }
    Ok(out)
}
