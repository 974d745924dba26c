use std::collections::BTreeMap;

use chrono_tz::Tz;
use serde::{Deserialize, Serialize};

use super::windows::sample_at;
use super::{
    build_features, filter_short, merge_trips, normalize_series, window_indices, DataError, FeatureRange,
    FeatureSeries, NormStats, Result, SequenceSample, TripRecord, DEFAULT_TIMEZONE,
};

/// Chronological split proportions applied per vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.70, val: 0.15 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub window_days: u32,
    /// Padding capacity; `None` picks the 99th percentile of history
    /// lengths over training samples, capped at [`DataConfig::MAX_CAPACITY`].
    pub capacity: Option<usize>,
    pub timezone: String,
    pub split: SplitFractions,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            window_days: 8,
            capacity: None,
            timezone: DEFAULT_TIMEZONE.into(),
            split: SplitFractions::default(),
        }
    }
}

impl DataConfig {
    pub const MAX_CAPACITY: usize = 64;

    pub fn tz(&self) -> Result<Tz> {
        self.timezone
            .parse()
            .map_err(|e| DataError::Config(format!("timezone `{}`: {e}", self.timezone)))
    }
}

/// Train / validation / test samples plus everything needed to interpret
/// them.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<SequenceSample>,
    pub val: Vec<SequenceSample>,
    pub test: Vec<SequenceSample>,
    pub stats: NormStats,
    pub capacity: usize,
    pub window_days: u32,
    /// Raw (denormalized) feature series per vehicle.
    pub series: Vec<FeatureSeries>,
    pub skipped_vehicles: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Groups trips by vehicle id, keeping each vehicle's input order.
pub fn group_by_vehicle(trips: &[TripRecord]) -> BTreeMap<String, Vec<TripRecord>> {
    let mut map: BTreeMap<String, Vec<TripRecord>> = BTreeMap::new();
    for t in trips {
        map.entry(t.vehicle_id.clone()).or_default().push(t.clone());
    }
    map
}

fn percentile_99(mut values: Vec<usize>) -> usize {
    if values.is_empty() {
        return 1;
    }
    values.sort_unstable();
    let rank = ((values.len() as f64) * 0.99).ceil() as usize;
    values[rank.clamp(1, values.len()) - 1]
}

struct VehiclePlan {
    series: FeatureSeries,
    /// `(target entry, entries in window)` per sample, chronological.
    windows: Vec<(usize, usize)>,
    n_train: usize,
    n_val: usize,
}

/// Runs merge → filter → features → split → normalize → window.
pub fn prepare_dataset(trips: &[TripRecord], config: &DataConfig) -> Result<Dataset> {
    prepare_dataset_with(trips, config, None)
}

/// [`prepare_dataset`] with normalization statistics fixed in advance
/// (for example those stored with a trained model).
pub fn prepare_dataset_with(trips: &[TripRecord], config: &DataConfig, fixed: Option<NormStats>) -> Result<Dataset> {
    let tz = config.tz()?;
    let split = config.split;
    if !(split.train > 0.0 && split.val >= 0.0 && split.train + split.val < 1.0) {
        return Err(DataError::Config(format!("invalid split fractions {split:?}")));
    }

    let mut plans = Vec::new();
    let mut skipped = Vec::new();
    for (vehicle, vtrips) in group_by_vehicle(trips) {
        let cleaned = filter_short(merge_trips(&vtrips)?);
        if cleaned.len() < 2 {
            log::warn!(
                "vehicle {vehicle}: {} trips left after cleaning, skipped",
                cleaned.len()
            );
            skipped.push(vehicle);
            continue;
        }
        let series = build_features(&cleaned, tz)?;
        let windows: Vec<(usize, usize)> = window_indices(&series.start_time, config.window_days, usize::MAX)?
            .into_iter()
            .map(|w| (w.target, w.in_window))
            .collect();
        let n = windows.len();
        let n_train = ((n as f64) * split.train).round() as usize;
        let n_val = (((n as f64) * split.val).round() as usize).min(n - n_train);
        plans.push(VehiclePlan {
            series,
            windows,
            n_train,
            n_val,
        });
    }

    let capacity = match config.capacity {
        Some(0) => return Err(DataError::Config("capacity must be at least 1".into())),
        Some(c) => c,
        None => percentile_99(
            plans
                .iter()
                .flat_map(|p| p.windows[..p.n_train].iter().map(|w| w.1))
                .collect(),
        )
        .min(DataConfig::MAX_CAPACITY),
    };

    // statistics see only entries up to each vehicle's last training target
    let train_entries = || {
        plans.iter().flat_map(|p| {
            let end = p.windows[..p.n_train].last().map_or(0, |w| w.0 + 1);
            (0..end).map(move |i| (p.series.delta_t[i], p.series.distance[i]))
        })
    };
    let stats = match fixed {
        Some(stats) => stats,
        None => NormStats {
            delta_t: FeatureRange::fit(train_entries().map(|e| e.0))
                .ok_or_else(|| DataError::Config("no training samples".into()))?,
            distance: FeatureRange::fit(train_entries().map(|e| e.1))
                .ok_or_else(|| DataError::Config("no training samples".into()))?,
        },
    };
    stats.validate()?;

    let mut dataset = Dataset {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        stats,
        capacity,
        window_days: config.window_days,
        series: Vec::with_capacity(plans.len()),
        skipped_vehicles: skipped,
    };
    for plan in plans {
        let normalized = normalize_series(&plan.series, &stats)?;
        let indices = window_indices(&normalized.start_time, config.window_days, capacity)?;
        for (k, w) in indices.into_iter().enumerate() {
            let sample = sample_at(&normalized, w, capacity);
            if k < plan.n_train {
                dataset.train.push(sample);
            } else if k < plan.n_train + plan.n_val {
                dataset.val.push(sample);
            } else {
                dataset.test.push(sample);
            }
        }
        dataset.series.push(plan.series);
    }
    Ok(dataset)
}
