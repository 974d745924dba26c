use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Result, TrainError};
use crate::ndcore::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    Adagrad,
    Rmsprop,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 4] = [
        OptimizerKind::Sgd,
        OptimizerKind::Adam,
        OptimizerKind::Adagrad,
        OptimizerKind::Rmsprop,
    ];
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OptimizerKind::Sgd => "SGD",
            OptimizerKind::Adam => "Adam",
            OptimizerKind::Adagrad => "Adagrad",
            OptimizerKind::Rmsprop => "RMSProp",
        };
        f.write_str(s)
    }
}

impl FromStr for OptimizerKind {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self> {
        OptimizerKind::ALL
            .into_iter()
            .find(|k| k.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| TrainError::Config(format!("unknown optimizer `{s}`")))
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const RHO: f64 = 0.9;
const EPS: f64 = 1e-8;

/// Per-parameter moment buffers. Empty until the first step, which sizes
/// them to match the parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    /// Adam first moment.
    pub m: Vec<Vec<f64>>,
    /// Adam second moment, Adagrad sum of squares, RMSProp running mean square.
    pub v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn is_finite(&self) -> bool {
        self.m.iter().chain(&self.v).flatten().all(|x| x.is_finite())
    }
}

/// Applies one update to `params` in place.
///
/// SGD: `θ ← θ − lr·g`. Adam: β1 = 0.9, β2 = 0.999, ε = 1e-8 with bias
/// correction. Adagrad: `G ← G + g²`, `θ ← θ − lr·g/(√G + ε)`. RMSProp:
/// `v ← ρv + (1−ρ)g²` with ρ = 0.9, `θ ← θ − lr·g/(√v + ε)`.
pub fn optimizer_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut OptimizerState,
    kind: OptimizerKind,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(TrainError::Config(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(TrainError::Config(format!(
                "gradient {i} has shape {:?}, parameter has {:?}",
                g.shape(),
                p.shape()
            )));
        }
        if !g.is_finite() {
            return Err(TrainError::Numeric(format!("non-finite gradient for parameter {i}")));
        }
    }
    if state.v.is_empty() {
        state.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        state.v = state.m.clone();
    } else if state.v.len() != grads.len() || state.v.iter().zip(grads).any(|(v, g)| v.len() != g.len()) {
        return Err(TrainError::Config("optimizer state does not match parameters".into()));
    }
    state.step += 1;
    let t = state.step as f64;
    let (c1, c2) = (1.0 - BETA1.powf(t), 1.0 - BETA2.powf(t));
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, (theta, &g)) in p.values_mut().iter_mut().zip(g.values()).enumerate() {
            *theta -= match kind {
                OptimizerKind::Sgd => lr * g,
                OptimizerKind::Adam => {
                    m[j] = BETA1 * m[j] + (1.0 - BETA1) * g;
                    v[j] = BETA2 * v[j] + (1.0 - BETA2) * g * g;
                    lr * (m[j] / c1) / ((v[j] / c2).sqrt() + EPS)
                }
                OptimizerKind::Adagrad => {
                    v[j] += g * g;
                    lr * g / (v[j].sqrt() + EPS)
                }
                OptimizerKind::Rmsprop => {
                    v[j] = RHO * v[j] + (1.0 - RHO) * g * g;
                    lr * g / (v[j].sqrt() + EPS)
                }
            };
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_step(kind: OptimizerKind, theta: f64, g: f64, lr: f64) -> f64 {
        let mut p = Tensor::scalar(theta);
        let mut state = OptimizerState::default();
        optimizer_step(&mut [&mut p], &[Tensor::scalar(g)], &mut state, kind, lr).unwrap();
        p.values()[0]
    }

    #[test]
    fn documented_first_steps() {
        assert!((one_step(OptimizerKind::Sgd, 1.0, 0.5, 0.1) - 0.95).abs() < 1e-15);
        let adam = one_step(OptimizerKind::Adam, 0.0, 1.0, 0.01);
        assert!((0.0099..=0.01).contains(&-adam), "{adam}");
        assert_eq!(one_step(OptimizerKind::Adagrad, 0.7, 0.0, 0.1), 0.7);
        // RMSProp first step: v = 0.1 g², Δ = lr·g/√(0.1 g²)
        let rms = one_step(OptimizerKind::Rmsprop, 0.0, 2.0, 0.01);
        assert!((rms + 0.01 / 0.1f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn adam_second_step_matches_hand_computation() {
        let mut p = Tensor::scalar(0.0);
        let mut s = OptimizerState::default();
        for g in [1.0, 0.5] {
            optimizer_step(&mut [&mut p], &[Tensor::scalar(g)], &mut s, OptimizerKind::Adam, 0.1).unwrap();
        }
        let m = 0.9 * 0.1 + 0.1 * 0.5;
        let v = 0.999 * 0.001 + 0.001 * 0.25;
        let second = 0.1 * (m / (1.0 - 0.81)) / ((v / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
        assert!((p.values()[0] - (-0.1 - second)).abs() < 1e-7);
    }

    #[test]
    fn rejects_nan_and_mismatch() {
        let mut p = Tensor::scalar(0.0);
        let mut s = OptimizerState::default();
        assert!(matches!(
            optimizer_step(
                &mut [&mut p],
                &[Tensor::scalar(f64::NAN)],
                &mut s,
                OptimizerKind::Adam,
                0.1
            ),
            Err(TrainError::Numeric(_))
        ));
        assert!(optimizer_step(&mut [&mut p], &[], &mut s, OptimizerKind::Sgd, 0.1).is_err());
    }

    #[test]
    fn state_stays_finite() {
        let mut p = Tensor::new(vec![3], vec![0.1, -0.2, 0.3]).unwrap();
        for kind in OptimizerKind::ALL {
            let mut s = OptimizerState::default();
            for k in 0..50 {
                let g = Tensor::new(vec![3], vec![1e3 * k as f64, -1e-9, 0.0]).unwrap();
                optimizer_step(&mut [&mut p], &[g], &mut s, kind, 0.01).unwrap();
            }
            assert!(s.is_finite() && p.is_finite(), "{kind}");
        }
    }
}
