use serde::{Deserialize, Serialize};

use super::{DataError, FeatureSeries, Result, SECONDS_PER_DAY};

/// Columns per step: normalized Δt, normalized distance, weekday one-hot.
pub const FEATURE_COUNT: usize = 9;
pub const WEEKDAY_OFFSET: usize = 2;

/// Named column groups `(name, first column, width)`; the unit of
/// feature-level attribution.
pub const FEATURE_GROUPS: [(&str, usize, usize); 3] =
    [("delta_t", 0, 1), ("distance", 1, 1), ("weekday", WEEKDAY_OFFSET, 7)];

/// One padded training window. Rows `valid_len..capacity` are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSample {
    pub vehicle_id: String,
    pub capacity: usize,
    pub valid_len: usize,
    /// `capacity × FEATURE_COUNT`, row-major, oldest trip first.
    pub features: Vec<f64>,
    /// Normalized `(Δt, d)` of the trip being predicted.
    pub target: [f64; 2],
    pub target_time: i64,
    /// Start time of each valid row.
    pub step_times: Vec<i64>,
}

impl SequenceSample {
    pub fn row(&self, step: usize) -> &[f64] {
        &self.features[step * FEATURE_COUNT..(step + 1) * FEATURE_COUNT]
    }

    pub fn row_mut(&mut self, step: usize) -> &mut [f64] {
        &mut self.features[step * FEATURE_COUNT..(step + 1) * FEATURE_COUNT]
    }

    /// Normalized `(Δt, d)` of the most recent history trip.
    pub fn last_step(&self) -> [f64; 2] {
        let row = self.row(self.valid_len - 1);
        [row[0], row[1]]
    }

    /// Builds a sample from normalized rows `(Δt, d, weekday)`.
    pub fn from_steps(
        vehicle_id: &str,
        steps: &[(f64, f64, u8)],
        step_times: Vec<i64>,
        capacity: usize,
        target: [f64; 2],
        target_time: i64,
    ) -> Self {
        let mut features = vec![0.0; capacity * FEATURE_COUNT];
        for (i, &(dt, d, wd)) in steps.iter().enumerate() {
            let row = &mut features[i * FEATURE_COUNT..(i + 1) * FEATURE_COUNT];
            row[0] = dt;
            row[1] = d;
            row[WEEKDAY_OFFSET + wd as usize] = 1.0;
        }
        Self {
            vehicle_id: vehicle_id.to_string(),
            capacity,
            valid_len: steps.len(),
            features,
            target,
            target_time,
            step_times,
        }
    }

    /// Same data re-padded to a different capacity (must hold `valid_len`).
    pub fn with_capacity(&self, capacity: usize) -> Self {
        assert!(capacity >= self.valid_len);
        let mut features = vec![0.0; capacity * FEATURE_COUNT];
        let n = self.valid_len * FEATURE_COUNT;
        features[..n].copy_from_slice(&self.features[..n]);
        Self {
            capacity,
            features,
            ..self.clone()
        }
    }
}

/// Which series entries feed one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowIndex {
    /// Entry being predicted.
    pub target: usize,
    /// First history entry kept after truncation to capacity.
    pub first: usize,
    /// History entries inside the window before truncation.
    pub in_window: usize,
}

impl WindowIndex {
    pub fn valid_len(&self) -> usize {
        self.target - self.first
    }
}

fn check_window(window_days: u32, capacity: usize) -> Result<()> {
    if !(1..=14).contains(&window_days) {
        return Err(DataError::Config(format!(
            "window_days must be in 1..=14, got {window_days}"
        )));
    }
    if capacity == 0 {
        return Err(DataError::Config("capacity must be at least 1".into()));
    }
    Ok(())
}

/// For every entry with at least one earlier entry in
/// `[start − window_days·86400, start)`, the span of history it sees.
pub fn window_indices(start_times: &[i64], window_days: u32, capacity: usize) -> Result<Vec<WindowIndex>> {
    check_window(window_days, capacity)?;
    let span = window_days as i64 * SECONDS_PER_DAY;
    let mut out = Vec::new();
    let mut lo = 0;
    for (j, &t) in start_times.iter().enumerate() {
        while lo < j && start_times[lo] < t - span {
            lo += 1;
        }
        let in_window = j - lo;
        if in_window == 0 {
            continue;
        }
        out.push(WindowIndex {
            target: j,
            first: j - in_window.min(capacity),
            in_window,
        });
    }
    Ok(out)
}

/// Builds padded samples from a normalized series, ordered by target time.
pub fn make_windows(series: &FeatureSeries, window_days: u32, capacity: usize) -> Result<Vec<SequenceSample>> {
    Ok(window_indices(&series.start_time, window_days, capacity)?
        .into_iter()
        .map(|w| sample_at(series, w, capacity))
        .collect())
}

/// History window for forecasting the trip after the last one in
/// `series`: every entry in `(last − window_days·86400, last]`, most recent
/// `capacity` kept. The target is unknown and left at zero.
pub fn latest_window(series: &FeatureSeries, window_days: u32, capacity: usize) -> Result<SequenceSample> {
    check_window(window_days, capacity)?;
    let n = series.len();
    let last = *series.start_time.last().ok_or_else(|| DataError::InsufficientHistory {
        vehicle: series.vehicle_id.clone(),
        found: 0,
    })?;
    let span = window_days as i64 * SECONDS_PER_DAY;
    let in_window = series.start_time.iter().rev().take_while(|&&t| t > last - span).count();
    let first = n - in_window.min(capacity);
    let steps: Vec<(f64, f64, u8)> = (first..n)
        .map(|i| (series.delta_t[i], series.distance[i], series.weekday[i]))
        .collect();
    Ok(SequenceSample::from_steps(
        &series.vehicle_id,
        &steps,
        series.start_time[first..].to_vec(),
        capacity,
        [0.0, 0.0],
        last,
    ))
}

pub(crate) fn sample_at(series: &FeatureSeries, w: WindowIndex, capacity: usize) -> SequenceSample {
    let steps: Vec<(f64, f64, u8)> = (w.first..w.target)
        .map(|i| (series.delta_t[i], series.distance[i], series.weekday[i]))
        .collect();
    SequenceSample::from_steps(
        &series.vehicle_id,
        &steps,
        series.start_time[w.first..w.target].to_vec(),
        capacity,
        [series.delta_t[w.target], series.distance[w.target]],
        series.start_time[w.target],
    )
}
