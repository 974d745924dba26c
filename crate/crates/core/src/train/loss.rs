use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Result, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Mean absolute error.
    Mae,
    /// Mean squared error.
    Mse,
    /// Log-cosh.
    Lhc,
    /// Huber with δ = 1.
    Hl,
    /// Mean squared logarithmic error.
    Msle,
    /// Poisson.
    Ps,
}

impl LossKind {
    pub const ALL: [LossKind; 6] = [
        LossKind::Mae,
        LossKind::Mse,
        LossKind::Lhc,
        LossKind::Hl,
        LossKind::Msle,
        LossKind::Ps,
    ];
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LossKind::Mae => "MAE",
            LossKind::Mse => "MSE",
            LossKind::Lhc => "LHC",
            LossKind::Hl => "HL",
            LossKind::Msle => "MSLE",
            LossKind::Ps => "PS",
        };
        f.write_str(s)
    }
}

impl FromStr for LossKind {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| TrainError::Config(format!("unknown loss `{s}`")))
    }
}

const HUBER_DELTA: f64 = 1.0;

fn log_cosh(e: f64) -> f64 {
    // stable for large |e|: log cosh e = |e| + log(1 + exp(-2|e|)) − log 2
    let a = e.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

fn check(kind: LossKind, pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(TrainError::Config(format!(
            "{kind} loss needs equal nonempty inputs, got {} and {}",
            pred.len(),
            target.len()
        )));
    }
    let bad = match kind {
        LossKind::Msle => pred.iter().chain(target).position(|&v| v <= -1.0),
        LossKind::Ps => pred.iter().position(|&p| p <= 0.0),
        _ => None,
    };
    if let Some(i) = bad {
        let message = match kind {
            LossKind::Msle => format!("value at position {i} is ≤ −1"),
            _ => format!("prediction at position {i} is ≤ 0"),
        };
        return Err(TrainError::Domain { kind, message });
    }
    Ok(())
}

/// Mean loss over all entries.
pub fn loss(pred: &[f64], target: &[f64], kind: LossKind) -> Result<f64> {
    Ok(loss_grad(pred, target, kind)?.0)
}

/// Mean loss and its gradient with respect to `pred`.
pub fn loss_grad(pred: &[f64], target: &[f64], kind: LossKind) -> Result<(f64, Vec<f64>)> {
    check(kind, pred, target)?;
    let n = pred.len() as f64;
    let mut total = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let e = p - t;
            let (value, slope) = match kind {
                LossKind::Mae => (e.abs(), if e == 0.0 { 0.0 } else { e.signum() }),
                LossKind::Mse => (e * e, 2.0 * e),
                LossKind::Lhc => (log_cosh(e), e.tanh()),
                LossKind::Hl => {
                    if e.abs() <= HUBER_DELTA {
                        (0.5 * e * e, e)
                    } else {
                        (HUBER_DELTA * (e.abs() - 0.5 * HUBER_DELTA), HUBER_DELTA * e.signum())
                    }
                }
                LossKind::Msle => {
                    let d = p.ln_1p() - t.ln_1p();
                    (d * d, 2.0 * d / (1.0 + p))
                }
                LossKind::Ps => (p - t * p.ln(), 1.0 - t / p),
            };
            total += value;
            slope / n
        })
        .collect();
    Ok((total / n, grad))
}
