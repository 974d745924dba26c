//! TimeSHAP attributions: a Shapley-kernel-weighted linear surrogate over
//! trip-level or feature-level coalitions, plus an exact brute-force
//! Shapley oracle.

mod report;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use report::{AttributionReport, UnitReport};

use crate::data::{SequenceSample, FEATURE_COUNT, FEATURE_GROUPS};
use crate::nn::{predict, ModelConfig, ModelParams, NnError};
use crate::seed::{self, stream};

#[derive(Debug, thiserror::Error)]
pub enum ExplainError {
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("outside domain: {0}")]
    Domain(String),
    #[error("degenerate explanation: {0}")]
    Degenerate(String),
    #[error("{units} units need 2^{units} evaluations; at most {max} supported")]
    CostGuard { units: usize, max: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<T> = std::result::Result<T, ExplainError>;

/// What a coalition bit switches on or off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    /// One unit per history trip.
    Event,
    /// One unit per feature group, across all trips.
    Feature,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Event => "event",
            Level::Feature => "feature",
        })
    }
}

impl FromStr for Level {
    type Err = ExplainError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "event" => Ok(Level::Event),
            "feature" => Ok(Level::Feature),
            _ => Err(ExplainError::Contract(format!("unknown level `{s}`"))),
        }
    }
}

/// Which of the two predicted targets is explained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Output {
    DeltaT,
    Distance,
}

impl Output {
    pub const BOTH: [Output; 2] = [Output::DeltaT, Output::Distance];

    pub fn index(self) -> usize {
        match self {
            Output::DeltaT => 0,
            Output::Distance => 1,
        }
    }
}

impl fmt::Display for Output {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Output::DeltaT => "delta_t",
            Output::Distance => "distance",
        })
    }
}

impl FromStr for Output {
    type Err = ExplainError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "delta_t" | "dt" => Ok(Output::DeltaT),
            "distance" | "d" => Ok(Output::Distance),
            _ => Err(ExplainError::Contract(format!("unknown output `{s}`"))),
        }
    }
}

/// Replacement value for every feature column of a switched-off unit.
pub type Background = [f64; FEATURE_COUNT];

/// Per-column mean over the valid rows of `samples`.
pub fn background_means(samples: &[SequenceSample]) -> Background {
    let mut sum = [0.0; FEATURE_COUNT];
    let mut rows = 0usize;
    for s in samples {
        for t in 0..s.valid_len {
            for (acc, x) in sum.iter_mut().zip(s.row(t)) {
                *acc += x;
            }
        }
        rows += s.valid_len;
    }
    sum.map(|x| if rows == 0 { 0.0 } else { x / rows as f64 })
}

/// Number of coalition units of `sample` at `level`.
pub fn unit_count(sample: &SequenceSample, level: Level) -> usize {
    match level {
        Level::Event => sample.valid_len,
        Level::Feature => FEATURE_GROUPS.len(),
    }
}

/// `h_X(z)`: switched-off units take background values. Padded rows are
/// left untouched.
pub fn perturb(sample: &SequenceSample, z: &[bool], background: &Background, level: Level) -> Result<SequenceSample> {
    let m = unit_count(sample, level);
    if z.len() != m {
        return Err(ExplainError::Contract(format!(
            "coalition of length {} for {m} {level} units",
            z.len()
        )));
    }
    let mut out = sample.clone();
    match level {
        Level::Event => {
            for (t, _) in z.iter().enumerate().filter(|(_, on)| !**on) {
                out.row_mut(t).copy_from_slice(background);
            }
        }
        Level::Feature => {
            for (g, _) in z.iter().enumerate().filter(|(_, on)| !**on) {
                let (_, start, width) = FEATURE_GROUPS[g];
                for t in 0..sample.valid_len {
                    out.row_mut(t)[start..start + width].copy_from_slice(&background[start..start + width]);
                }
            }
        }
    }
    Ok(out)
}

fn binomial(m: usize, s: usize) -> f64 {
    let s = s.min(m - s);
    (0..s).fold(1.0, |acc, i| acc * (m - i) as f64 / (i + 1) as f64)
}

/// Shapley kernel `(m−1) / (C(m,s)·s·(m−s))` for `0 < s < m`.
pub fn shapley_kernel_weight(m: usize, s: usize) -> Result<f64> {
    if s == 0 || s >= m {
        return Err(ExplainError::Domain(format!(
            "coalition size {s} with {m} units; endpoints are constraints"
        )));
    }
    Ok((m - 1) as f64 / (binomial(m, s) * s as f64 * (m - s) as f64))
}

/// Scores a batch of (perturbed) samples.
pub trait Scorer {
    fn score(&self, samples: &[SequenceSample]) -> Result<Vec<f64>>;
}

impl<F: Fn(&SequenceSample) -> f64> Scorer for F {
    fn score(&self, samples: &[SequenceSample]) -> Result<Vec<f64>> {
        Ok(samples.iter().map(self).collect())
    }
}

/// One output of a trained model.
pub struct ModelScorer<'a> {
    pub config: &'a ModelConfig,
    pub params: &'a ModelParams,
    pub output: Output,
}

impl Scorer for ModelScorer<'_> {
    fn score(&self, samples: &[SequenceSample]) -> Result<Vec<f64>> {
        let i = self.output.index();
        Ok(predict(self.config, self.params, samples)?
            .into_iter()
            .map(|p| p[i])
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeShapOptions {
    /// Enumerate every coalition up to this many units.
    pub max_exact_m: usize,
    /// Coalitions drawn (in complementary pairs) above `max_exact_m`.
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for TimeShapOptions {
    fn default() -> Self {
        Self {
            max_exact_m: 12,
            n_samples: 2048,
            seed: 0,
        }
    }
}

/// Linear surrogate `f(h_X(z)) ≈ b0 + Σ w_i z_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub level: Level,
    pub output: Option<Output>,
    /// `f(h_X(0))`.
    pub base_score: f64,
    /// `f(X)`.
    pub model_score: f64,
    pub weights: Vec<f64>,
    /// Whether every coalition was enumerated.
    pub exact: bool,
}

impl Attribution {
    /// `b0 + Σ w_i − f(X)`.
    pub fn efficiency_gap(&self) -> f64 {
        self.base_score + self.weights.iter().sum::<f64>() - self.model_score
    }
}

fn coalition_of(bits: u64, m: usize) -> Vec<bool> {
    (0..m).map(|i| bits >> i & 1 == 1).collect()
}

fn score_coalitions(
    scorer: &dyn Scorer,
    sample: &SequenceSample,
    background: &Background,
    level: Level,
    coalitions: &[Vec<bool>],
) -> Result<Vec<f64>> {
    let perturbed = coalitions
        .iter()
        .map(|z| perturb(sample, z, background, level))
        .collect::<Result<Vec<_>>>()?;
    let scores = scorer.score(&perturbed)?;
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(ExplainError::Domain(format!("non-finite score for coalition {i}")));
    }
    Ok(scores)
}

/// Paired-complement draws: size `s` with probability ∝ `(m−1)/(s(m−s))`,
/// then a uniform subset of that size and its complement.
fn sample_coalitions(m: usize, n: usize, seed_value: u64) -> Vec<Vec<bool>> {
    let mut rng = seed::rng(seed_value, stream::EXPLAIN);
    let size_weights: Vec<f64> = (1..m).map(|s| 1.0 / (s * (m - s)) as f64).collect();
    let total: f64 = size_weights.iter().sum();
    let mut out = Vec::with_capacity(n + 1);
    while out.len() < n {
        let mut u = rng.gen::<f64>() * total;
        let mut s = m - 1;
        for (k, w) in size_weights.iter().enumerate() {
            if u < *w {
                s = k + 1;
                break;
            }
            u -= w;
        }
        let mut z = vec![false; m];
        for i in index::sample(&mut rng, m, s) {
            z[i] = true;
        }
        let complement = z.iter().map(|b| !b).collect();
        out.push(z);
        out.push(complement);
    }
    out
}

/// Fits the kernel-weighted surrogate with `b0 = f(0)` and
/// `b0 + Σ w = f(X)` as equality constraints.
///
/// The last weight is eliminated (`w_m = Δ − Σ_{i<m} w_i`, `Δ = f(X) − b0`),
/// leaving an unconstrained weighted least-squares problem in `m − 1`
/// unknowns, solved by SVD.
pub fn timeshap(
    scorer: &dyn Scorer,
    sample: &SequenceSample,
    background: &Background,
    level: Level,
    opts: &TimeShapOptions,
) -> Result<Attribution> {
    let m = unit_count(sample, level);
    if m == 0 {
        return Err(ExplainError::Contract("nothing to explain".into()));
    }
    let ends = score_coalitions(scorer, sample, background, level, &[vec![false; m], vec![true; m]])?;
    let (base, full) = (ends[0], ends[1]);
    let delta = full - base;
    let mut attr = Attribution {
        level,
        output: None,
        base_score: base,
        model_score: full,
        weights: vec![delta],
        exact: true,
    };
    if m == 1 {
        return Ok(attr);
    }

    let exact = m <= opts.max_exact_m;
    let (coalitions, kernel): (Vec<Vec<bool>>, Vec<f64>) = if exact {
        if m > 62 {
            return Err(ExplainError::CostGuard { units: m, max: 62 });
        }
        (1..(1u64 << m) - 1)
            .map(|bits| {
                let z = coalition_of(bits, m);
                let s = z.iter().filter(|b| **b).count();
                let w = shapley_kernel_weight(m, s).expect("0 < s < m");
                (z, w)
            })
            .unzip()
    } else {
        if opts.n_samples < 2 {
            return Err(ExplainError::Contract("n_samples must be at least 2".into()));
        }
        let zs = sample_coalitions(m, opts.n_samples, opts.seed);
        let ones = vec![1.0; zs.len()];
        (zs, ones)
    };
    let scores = score_coalitions(scorer, sample, background, level, &coalitions)?;

    let k = m - 1;
    let rows = coalitions.len();
    let mut a = DMatrix::<f64>::zeros(rows, k);
    let mut b = DVector::<f64>::zeros(rows);
    for (r, (z, (&y, &w))) in coalitions.iter().zip(scores.iter().zip(&kernel)).enumerate() {
        let sw = w.sqrt();
        let zm = if z[k] { 1.0 } else { 0.0 };
        for i in 0..k {
            let zi = if z[i] { 1.0 } else { 0.0 };
            a[(r, i)] = sw * (zi - zm);
        }
        b[r] = sw * (y - base - zm * delta);
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return Err(ExplainError::Degenerate(format!(
            "regression design has rank below {k} (singular values {smin:e}..{smax:e})"
        )));
    }
    let w = svd
        .solve(&b, 0.0)
        .map_err(|e| ExplainError::Degenerate(e.to_string()))?;
    let mut weights: Vec<f64> = w.iter().copied().collect();
    weights.push(delta - weights.iter().sum::<f64>());
    attr.weights = weights;
    attr.exact = exact;
    Ok(attr)
}

/// [`timeshap`] on one output of a trained model.
pub fn explain_prediction(
    config: &ModelConfig,
    params: &ModelParams,
    sample: &SequenceSample,
    background: &Background,
    level: Level,
    output: Output,
    opts: &TimeShapOptions,
) -> Result<Attribution> {
    let scorer = ModelScorer { config, params, output };
    let mut attr = timeshap(&scorer, sample, background, level, opts)?;
    attr.output = Some(output);
    Ok(attr)
}

/// Largest unit count [`brute_force_shapley`] accepts.
pub const BRUTE_FORCE_MAX_UNITS: usize = 16;

/// Classical Shapley values over the coalition game `S ↦ f(h_X(1_S))`.
pub fn brute_force_shapley(
    scorer: &dyn Scorer,
    sample: &SequenceSample,
    background: &Background,
    level: Level,
) -> Result<Vec<f64>> {
    let m = unit_count(sample, level);
    if m > BRUTE_FORCE_MAX_UNITS {
        return Err(ExplainError::CostGuard {
            units: m,
            max: BRUTE_FORCE_MAX_UNITS,
        });
    }
    let coalitions: Vec<Vec<bool>> = (0..1u64 << m).map(|bits| coalition_of(bits, m)).collect();
    let value = score_coalitions(scorer, sample, background, level, &coalitions)?;
    // |S|!(m−|S|−1)!/m! for every |S|
    let factor: Vec<f64> = (0..m).map(|s| 1.0 / (m as f64 * binomial(m - 1, s))).collect();
    let mut phi = vec![0.0; m];
    for bits in 0..1u64 << m {
        let s = bits.count_ones() as usize;
        for (i, p) in phi.iter_mut().enumerate() {
            if bits >> i & 1 == 0 {
                let with = (bits | 1 << i) as usize;
                *p += factor[s] * (value[with] - value[bits as usize]);
            }
        }
    }
    Ok(phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, Variant};
    use rand::SeedableRng;

    fn sample(valid: usize, seed: u64) -> SequenceSample {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let steps: Vec<(f64, f64, u8)> = (0..valid)
            .map(|_| (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0..7)))
            .collect();
        SequenceSample::from_steps("v", &steps, (0..valid as i64).collect(), valid + 2, [0.3, 0.4], 100)
    }

    #[test]
    fn kernel_weights() {
        assert_eq!(shapley_kernel_weight(2, 1).unwrap(), 0.5);
        assert!((shapley_kernel_weight(3, 1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        for m in 2..12 {
            for s in 1..m {
                assert_eq!(
                    shapley_kernel_weight(m, s).unwrap(),
                    shapley_kernel_weight(m, m - s).unwrap()
                );
            }
        }
        assert!(matches!(shapley_kernel_weight(3, 0), Err(ExplainError::Domain(_))));
        assert!(shapley_kernel_weight(3, 3).is_err());
    }

    #[test]
    fn perturbation_contract() {
        let x = sample(4, 1);
        let bg = [0.5; FEATURE_COUNT];
        assert_eq!(perturb(&x, &[true; 4], &bg, Level::Event).unwrap(), x);
        let off = perturb(&x, &[false; 4], &bg, Level::Event).unwrap();
        for t in 0..4 {
            assert!(off.row(t).iter().all(|&v| v == 0.5));
        }
        assert!(off.row(4).iter().all(|&v| v == 0.0));
        // one bit changes exactly one trip
        let one = perturb(&x, &[true, false, true, true], &bg, Level::Event).unwrap();
        for t in 0..x.capacity {
            assert_eq!(one.row(t) == x.row(t), t != 1);
        }
        // one feature bit changes exactly that column group
        let f = perturb(&x, &[true, false, true], &bg, Level::Feature).unwrap();
        for t in 0..4 {
            assert_eq!(f.row(t)[0], x.row(t)[0]);
            assert_eq!(f.row(t)[1], 0.5);
            assert_eq!(f.row(t)[2..], x.row(t)[2..]);
        }
        assert!(perturb(&x, &[true; 3], &bg, Level::Event).is_err());
    }

    #[test]
    fn constant_model_is_null() {
        let x = sample(5, 2);
        let f = |_: &SequenceSample| 0.7;
        let a = timeshap(&f, &x, &[0.0; FEATURE_COUNT], Level::Event, &TimeShapOptions::default()).unwrap();
        assert_eq!(a.base_score, 0.7);
        assert!(a.weights.iter().all(|w| w.abs() < 1e-12), "{:?}", a.weights);
    }

    #[test]
    fn linear_model_with_zero_background() {
        // f(X) = Σ_t (2·Δt_t + 3·d_t): per-trip Shapley value is 2·Δt + 3·d
        let x = sample(6, 3);
        let f = |s: &SequenceSample| {
            (0..s.valid_len)
                .map(|t| 2.0 * s.row(t)[0] + 3.0 * s.row(t)[1])
                .sum::<f64>()
        };
        let bg = [0.0; FEATURE_COUNT];
        let a = timeshap(&f, &x, &bg, Level::Event, &TimeShapOptions::default()).unwrap();
        let oracle = brute_force_shapley(&f, &x, &bg, Level::Event).unwrap();
        for (t, (w, o)) in a.weights.iter().zip(&oracle).enumerate() {
            let expected = 2.0 * x.row(t)[0] + 3.0 * x.row(t)[1];
            assert!((w - expected).abs() < 1e-9);
            assert!((o - expected).abs() < 1e-12);
        }
        assert!(a.efficiency_gap().abs() < 1e-12);
    }

    #[test]
    fn null_player_and_symmetry() {
        let mut x = sample(4, 4);
        let bg = [0.25; FEATURE_COUNT];
        x.row_mut(2).copy_from_slice(&bg);
        let row1 = x.row(1).to_vec();
        x.row_mut(3).copy_from_slice(&row1);
        // exchangeable in trips
        let f = |s: &SequenceSample| {
            let total: f64 = (0..s.valid_len).map(|t| s.row(t)[0] - s.row(t)[1]).sum();
            total.tanh() + total * total
        };
        let phi = brute_force_shapley(&f, &x, &bg, Level::Event).unwrap();
        assert!(phi[2].abs() < 1e-12);
        assert!((phi[1] - phi[3]).abs() < 1e-12);
        let a = timeshap(&f, &x, &bg, Level::Event, &TimeShapOptions::default()).unwrap();
        assert!(a.weights[2].abs() < 1e-8);
    }

    #[test]
    fn exact_matches_oracle_on_models() {
        for (k, v) in Variant::ALL.into_iter().enumerate() {
            let config = ModelConfig::tiny(v);
            let params = init_params(&config, k as u64).unwrap();
            let x = sample(6, 10 + k as u64);
            let x = x.with_capacity(config.max_seq_len);
            let bg = [0.3; FEATURE_COUNT];
            for output in Output::BOTH {
                for level in [Level::Event, Level::Feature] {
                    let a = explain_prediction(&config, &params, &x, &bg, level, output, &TimeShapOptions::default())
                        .unwrap();
                    let scorer = ModelScorer {
                        config: &config,
                        params: &params,
                        output,
                    };
                    let oracle = brute_force_shapley(&scorer, &x, &bg, level).unwrap();
                    for (w, o) in a.weights.iter().zip(&oracle) {
                        assert!((w - o).abs() < 1e-6, "{v} {level}: {w} vs {o}");
                    }
                    assert!(a.efficiency_gap().abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn sampled_mode_is_deterministic_and_efficient() {
        let x = sample(14, 5);
        let f = |s: &SequenceSample| {
            (0..s.valid_len)
                .map(|t| (s.row(t)[0] * (t + 1) as f64).sin())
                .sum::<f64>()
                .powi(2)
        };
        let bg = [0.0; FEATURE_COUNT];
        let opts = TimeShapOptions {
            n_samples: 400,
            ..TimeShapOptions::default()
        };
        let a = timeshap(&f, &x, &bg, Level::Event, &opts).unwrap();
        let b = timeshap(&f, &x, &bg, Level::Event, &opts).unwrap();
        assert!(!a.exact);
        assert_eq!(a, b);
        assert!(a.efficiency_gap().abs() < 1e-8);
    }

    #[test]
    fn too_few_samples_is_degenerate() {
        let x = sample(14, 6);
        let f = |s: &SequenceSample| s.row(0)[0];
        let opts = TimeShapOptions {
            n_samples: 4,
            ..TimeShapOptions::default()
        };
        assert!(matches!(
            timeshap(&f, &x, &[0.0; FEATURE_COUNT], Level::Event, &opts),
            Err(ExplainError::Degenerate(_))
        ));
    }

    #[test]
    fn brute_force_cost_guard() {
        let x = sample(17, 7);
        let f = |_: &SequenceSample| 0.0;
        assert!(matches!(
            brute_force_shapley(&f, &x, &[0.0; FEATURE_COUNT], Level::Event),
            Err(ExplainError::CostGuard { .. })
        ));
    }

    #[test]
    fn background_means_ignore_padding() {
        let s = SequenceSample::from_steps("v", &[(0.2, 0.4, 0), (0.4, 0.8, 1)], vec![0, 1], 5, [0.0; 2], 2);
        let bg = background_means(&[s]);
        assert!((bg[0] - 0.3).abs() < 1e-15 && (bg[1] - 0.6).abs() < 1e-15);
        assert_eq!(bg[2..4], [0.5, 0.5]);
        assert_eq!(bg[4], 0.0);
    }
}
