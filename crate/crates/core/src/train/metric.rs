use serde::{Deserialize, Serialize};

use super::{Result, TrainError};
use crate::data::{NormStats, SequenceSample};

/// Relative prediction error `100 · sqrt(Σ|X − X̂|² / Σ|X|²)`.
pub fn prediction_error(preds: &[f64], labels: &[f64]) -> Result<f64> {
    if preds.len() != labels.len() || labels.is_empty() {
        return Err(TrainError::Metric(format!(
            "need equal nonempty inputs, got {} predictions and {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let den: f64 = labels.iter().map(|x| x * x).sum();
    if den == 0.0 {
        return Err(TrainError::Metric("all labels are zero".into()));
    }
    let num: f64 = preds.iter().zip(labels).map(|(p, x)| (x - p) * (x - p)).sum();
    Ok(100.0 * (num / den).sqrt())
}

/// Prediction error on denormalized targets: combined over `[Δt…, d…]` and per target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetErrors {
    pub combined: f64,
    pub delta_t: f64,
    pub distance: f64,
}

/// Errors of normalized predictions against the samples' targets.
pub fn target_errors(preds: &[[f64; 2]], samples: &[SequenceSample], stats: &NormStats) -> Result<TargetErrors> {
    let targets: Vec<[f64; 2]> = samples.iter().map(|s| s.target).collect();
    errors_against(preds, &targets, stats)
}

pub(crate) fn errors_against(preds: &[[f64; 2]], targets: &[[f64; 2]], stats: &NormStats) -> Result<TargetErrors> {
    if preds.len() != targets.len() {
        return Err(TrainError::Metric(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let n = preds.len();
    let mut p = vec![0.0; 2 * n];
    let mut x = vec![0.0; 2 * n];
    for (i, (pred, target)) in preds.iter().zip(targets).enumerate() {
        let pd = stats.denormalize_pair(*pred);
        let xd = stats.denormalize_pair(*target);
        (p[i], p[n + i]) = (pd[0], pd[1]);
        (x[i], x[n + i]) = (xd[0], xd[1]);
    }
    Ok(TargetErrors {
        combined: prediction_error(&p, &x)?,
        delta_t: prediction_error(&p[..n], &x[..n])?,
        distance: prediction_error(&p[n..], &x[n..])?,
    })
}

/// Persistence baseline: the next trip repeats the most recent one.
pub fn persistence_predictions(samples: &[SequenceSample]) -> Vec<[f64; 2]> {
    samples.iter().map(SequenceSample::last_step).collect()
}
