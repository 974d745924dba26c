use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metric::errors_against;
use super::{
    loss_grad, optimizer_step, target_errors, LossKind, OptimizerKind, OptimizerState, Result, TargetErrors, TrainError,
};
use crate::data::{NormStats, SequenceSample};
use crate::ndcore::{Tape, Tensor};
use crate::nn::{forward_batch, predict, Batch, ModelConfig, ModelParams};
use crate::seed::{self, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Upper bound on epochs (per round for cross-validation).
    pub epochs: usize,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Mae,
            optimizer: OptimizerKind::Adam,
            learning_rate: 0.01,
            batch_size: 128,
            epochs: 200,
            seed: 0,
            patience: 50,
        }
    }
}

impl TrainConfig {
    pub const MAX_LEARNING_RATE: f64 = 0.1;
    pub const BATCH_RANGE: std::ops::RangeInclusive<usize> = 16..=512;

    /// A learning rate of exactly 0 is accepted and freezes the parameters.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=Self::MAX_LEARNING_RATE).contains(&self.learning_rate) {
            return Err(TrainError::Config(format!(
                "learning_rate {} outside [0, {}]",
                self.learning_rate,
                Self::MAX_LEARNING_RATE
            )));
        }
        if !Self::BATCH_RANGE.contains(&self.batch_size) {
            return Err(TrainError::Config(format!(
                "batch_size {} outside [16, 512]",
                self.batch_size
            )));
        }
        if self.epochs == 0 || self.patience == 0 {
            return Err(TrainError::Config("epochs and patience must be positive".into()));
        }
        Ok(())
    }
}

/// Cross-validation transfer schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossValConfig {
    pub rounds: usize,
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for CrossValConfig {
    fn default() -> Self {
        Self {
            rounds: 10,
            train_fraction: 0.75,
            val_fraction: 0.15,
        }
    }
}

impl CrossValConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rounds >= 1
            && self.train_fraction > 0.0
            && self.val_fraction > 0.0
            && self.train_fraction + self.val_fraction <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(TrainError::Config(format!(
                "invalid cross-validation schedule {self:?}"
            )))
        }
    }

    /// `(train, val)` pool indices for every round, drawn independently
    /// per round.
    pub fn rounds_for(&self, pool_len: usize, seed_value: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
        self.validate()?;
        let n_train = (pool_len as f64 * self.train_fraction).round() as usize;
        let n_val = ((pool_len as f64 * self.val_fraction).round() as usize).min(pool_len - n_train);
        if n_train == 0 || n_val == 0 {
            return Err(TrainError::Config(format!("pool of {pool_len} samples is too small")));
        }
        let mut rng = seed::rng(seed_value, stream::CROSS_VAL);
        Ok((0..self.rounds)
            .map(|_| {
                let mut idx: Vec<usize> = (0..pool_len).collect();
                idx.shuffle(&mut rng);
                let val = idx[n_train..n_train + n_val].to_vec();
                idx.truncate(n_train);
                (idx, val)
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Splits<'a> {
    pub train: &'a [SequenceSample],
    pub val: &'a [SequenceSample],
    pub test: &'a [SequenceSample],
}

/// One row of the learning curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based, counted across cross-validation rounds.
    pub epoch: usize,
    pub round: usize,
    pub train_loss: f64,
    /// Prediction error over the epoch's batch predictions, taken before each update.
    pub train_error: f64,
    pub val_error: f64,
    pub test_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub prediction_error_pct: f64,
    pub delta_t_error_pct: f64,
    pub distance_error_pct: f64,
    pub samples: usize,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

impl EvalReport {
    fn new(errors: TargetErrors, samples: usize, best_epoch: usize, history: Vec<EpochRecord>) -> Self {
        Self {
            prediction_error_pct: errors.combined,
            delta_t_error_pct: errors.delta_t,
            distance_error_pct: errors.distance,
            samples,
            best_epoch,
            history,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub report: EvalReport,
}

/// Prediction errors of `params` on `samples`.
pub fn evaluate(
    model: &ModelConfig,
    params: &ModelParams,
    samples: &[SequenceSample],
    stats: &NormStats,
) -> Result<TargetErrors> {
    let preds = predict(model, params, samples)?;
    target_errors(&preds, samples, stats)
}

fn train_epoch(
    model: &ModelConfig,
    params: &mut ModelParams,
    state: &mut OptimizerState,
    samples: &[&SequenceSample],
    cfg: &TrainConfig,
) -> Result<(f64, Vec<[f64; 2]>)> {
    let mut preds = Vec::with_capacity(samples.len());
    let mut total = 0.0;
    for chunk in samples.chunks(cfg.batch_size) {
        let batch = Batch::new(model, chunk)?;
        let b = batch.size;
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, true);
        let y = forward_batch(&mut tape, model, &bound, &batch)?;
        let values = tape.value(y).values().to_vec();
        let mut target = vec![0.0; 2 * b];
        for (j, s) in chunk.iter().enumerate() {
            (target[j], target[b + j]) = (s.target[0], s.target[1]);
        }
        let (value, grad) = loss_grad(&values, &target, cfg.loss)?;
        if !value.is_finite() {
            return Err(TrainError::Numeric(format!("{} loss is {value}", cfg.loss)));
        }
        total += value * b as f64;
        preds.extend((0..b).map(|j| [values[j], values[b + j]]));
        let grads = tape.backward_from(y, &Tensor::new(vec![2, b], grad)?)?;
        let grads: Vec<Tensor> = bound
            .order
            .iter()
            .zip(params.tensors())
            .map(|(&v, t)| grads.get_or_zeros(v, t))
            .collect();
        optimizer_step(
            &mut params.tensors_mut(),
            &grads,
            state,
            cfg.optimizer,
            cfg.learning_rate,
        )?;
    }
    Ok((total / samples.len() as f64, preds))
}

/// Batches per length bucket; each bucket is sorted by sequence length so
/// a batch pads to roughly its own length.
const BUCKET_BATCHES: usize = 16;

/// Shuffles, sorts each bucket by length, then shuffles the batches.
fn bucket_order(order: &mut Vec<&SequenceSample>, batch_size: usize, rng: &mut ChaCha8Rng) {
    order.shuffle(rng);
    for bucket in order.chunks_mut(batch_size * BUCKET_BATCHES) {
        bucket.sort_by_key(|s| s.valid_len);
    }
    let mut batches: Vec<Vec<&SequenceSample>> = order.chunks(batch_size).map(<[_]>::to_vec).collect();
    batches.shuffle(rng);
    *order = batches.concat();
}

/// Trains with per-epoch validation and early stopping, returning the
/// best-validation parameters, the epoch they came from, and the curves.
#[allow(clippy::too_many_arguments)]
fn fit(
    model: &ModelConfig,
    mut params: ModelParams,
    splits: Splits<'_>,
    stats: &NormStats,
    cfg: &TrainConfig,
    shuffle: &mut ChaCha8Rng,
    round: usize,
    history: &mut Vec<EpochRecord>,
) -> Result<(ModelParams, usize)> {
    if splits.train.is_empty() || splits.val.is_empty() || splits.test.is_empty() {
        return Err(TrainError::Config(format!(
            "empty split (train {}, val {}, test {})",
            splits.train.len(),
            splits.val.len(),
            splits.test.len()
        )));
    }
    let mut state = OptimizerState::default();
    let mut best = (f64::INFINITY, params.clone(), history.len());
    let mut order: Vec<&SequenceSample> = splits.train.iter().collect();
    for _ in 0..cfg.epochs {
        bucket_order(&mut order, cfg.batch_size, shuffle);
        let (train_loss, preds) = train_epoch(model, &mut params, &mut state, &order, cfg)?;
        let targets: Vec<[f64; 2]> = order.iter().map(|s| s.target).collect();
        let train_error = errors_against(&preds, &targets, stats)?.combined;
        let val_error = evaluate(model, &params, splits.val, stats)?.combined;
        let test_error = evaluate(model, &params, splits.test, stats)?.combined;
        let epoch = history.len() + 1;
        log::debug!("round {round} epoch {epoch}: loss {train_loss:.5} train {train_error:.3}% val {val_error:.3}%");
        history.push(EpochRecord {
            epoch,
            round,
            train_loss,
            train_error,
            val_error,
            test_error,
        });
        if val_error < best.0 {
            best = (val_error, params.clone(), epoch);
        } else if epoch - best.2 >= cfg.patience {
            break;
        }
    }
    Ok((best.1, best.2))
}

/// Mini-batch training on a fixed train/validation/test split.
pub fn train_fixed_split(
    model: &ModelConfig,
    init: ModelParams,
    splits: Splits<'_>,
    stats: &NormStats,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.validate()?;
    let mut shuffle = seed::rng(cfg.seed, stream::SHUFFLE);
    let mut history = Vec::new();
    let (params, best_epoch) = fit(model, init, splits, stats, cfg, &mut shuffle, 1, &mut history)?;
    let errors = evaluate(model, &params, splits.test, stats)?;
    Ok(TrainOutcome {
        params,
        report: EvalReport::new(errors, splits.test.len(), best_epoch, history),
    })
}

/// Successive training rounds on resampled subsets of `pool`, each round
/// starting from the previous round's weights; evaluated on `test`.
pub fn cross_validate_transfer(
    model: &ModelConfig,
    init: ModelParams,
    pool: &[SequenceSample],
    test: &[SequenceSample],
    stats: &NormStats,
    cfg: &TrainConfig,
    cv: &CrossValConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.validate()?;
    let pool_keys: HashSet<(&str, i64)> = pool.iter().map(|s| (s.vehicle_id.as_str(), s.target_time)).collect();
    if let Some(s) = test
        .iter()
        .find(|s| pool_keys.contains(&(s.vehicle_id.as_str(), s.target_time)))
    {
        return Err(TrainError::Leakage(format!("{} at {}", s.vehicle_id, s.target_time)));
    }
    let rounds = cv.rounds_for(pool.len(), cfg.seed)?;
    let mut shuffle = seed::rng(cfg.seed, stream::SHUFFLE);
    let mut history = Vec::new();
    let mut params = init;
    let mut best_epoch = 0;
    for (r, (train_idx, val_idx)) in rounds.iter().enumerate() {
        let train: Vec<SequenceSample> = train_idx.iter().map(|&i| pool[i].clone()).collect();
        let val: Vec<SequenceSample> = val_idx.iter().map(|&i| pool[i].clone()).collect();
        let splits = Splits {
            train: &train,
            val: &val,
            test,
        };
        (params, best_epoch) = fit(model, params, splits, stats, cfg, &mut shuffle, r + 1, &mut history)?;
    }
    let errors = evaluate(model, &params, test, stats)?;
    Ok(TrainOutcome {
        params,
        report: EvalReport::new(errors, test.len(), best_epoch, history),
    })
}
