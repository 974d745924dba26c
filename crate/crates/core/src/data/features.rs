use chrono::{Datelike, TimeZone};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};

use super::{DataError, Result, TripRecord};

pub const DEFAULT_TIMEZONE: &str = "Europe/Stockholm";

/// Per-trip features of one vehicle. Entry `j` describes trip `j + 1` of
/// the cleaned log; the first trip only anchors the first time gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSeries {
    pub vehicle_id: String,
    pub start_time: Vec<i64>,
    /// Seconds since the previous trip start.
    pub delta_t: Vec<f64>,
    pub distance: Vec<f64>,
    /// Local weekday, Monday = 0 … Sunday = 6.
    pub weekday: Vec<u8>,
}

impl FeatureSeries {
    pub fn len(&self) -> usize {
        self.delta_t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta_t.is_empty()
    }
}

/// Weekday of an epoch timestamp in `tz`, Monday = 0.
pub fn weekday_of(epoch_secs: i64, tz: Tz) -> u8 {
    let local = tz
        .timestamp_opt(epoch_secs, 0)
        .single()
        .expect("UTC timestamps map to exactly one local time");
    local.weekday().num_days_from_monday() as u8
}

pub fn build_features(trips: &[TripRecord], tz: Tz) -> Result<FeatureSeries> {
    let vehicle_id = trips.first().map(|t| t.vehicle_id.clone()).unwrap_or_default();
    if trips.len() < 2 {
        return Err(DataError::InsufficientHistory {
            vehicle: vehicle_id,
            found: trips.len(),
        });
    }
    let mut series = FeatureSeries {
        vehicle_id,
        start_time: Vec::with_capacity(trips.len() - 1),
        delta_t: Vec::with_capacity(trips.len() - 1),
        distance: Vec::with_capacity(trips.len() - 1),
        weekday: Vec::with_capacity(trips.len() - 1),
    };
    for pair in trips.windows(2) {
        let dt = pair[1].start_time - pair[0].start_time;
        if dt <= 0 {
            return Err(DataError::Validation(format!(
                "vehicle {}: non-increasing start times {} -> {}",
                series.vehicle_id, pair[0].start_time, pair[1].start_time
            )));
        }
        series.start_time.push(pair[1].start_time);
        series.delta_t.push(dt as f64);
        series.distance.push(pair[1].distance_km);
        series.weekday.push(weekday_of(pair[1].start_time, tz));
    }
    Ok(series)
}

/// Min and max of one feature over the training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRange {
    pub min: f64,
    pub max: f64,
}

impl FeatureRange {
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let mut it = values.into_iter();
        let first = it.next()?;
        let (min, max) = it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v)));
        Some(Self { min, max })
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.min) / (self.max - self.min)
    }

    pub fn denormalize(&self, x: f64) -> f64 {
        x * (self.max - self.min) + self.min
    }
}

/// Max-min statistics for the two continuous features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub delta_t: FeatureRange,
    pub distance: FeatureRange,
}

impl NormStats {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_t.max > self.delta_t.min) {
            return Err(DataError::DegenerateFeature("delta_t"));
        }
        if !(self.distance.max > self.distance.min) {
            return Err(DataError::DegenerateFeature("distance"));
        }
        Ok(())
    }

    /// Maps a normalized `(Δt, d)` pair back to seconds and kilometres.
    pub fn denormalize_pair(&self, pair: [f64; 2]) -> [f64; 2] {
        [self.delta_t.denormalize(pair[0]), self.distance.denormalize(pair[1])]
    }
}

/// `(x − min) / (max − min)`; values outside the training range are not clipped.
pub fn normalize(values: &[f64], range: FeatureRange) -> Result<Vec<f64>> {
    if !(range.max > range.min) {
        return Err(DataError::DegenerateFeature("feature"));
    }
    Ok(values.iter().map(|&x| range.normalize(x)).collect())
}

pub fn denormalize(values: &[f64], range: FeatureRange) -> Vec<f64> {
    values.iter().map(|&x| range.denormalize(x)).collect()
}

pub fn normalize_series(series: &FeatureSeries, stats: &NormStats) -> Result<FeatureSeries> {
    stats.validate()?;
    Ok(FeatureSeries {
        vehicle_id: series.vehicle_id.clone(),
        start_time: series.start_time.clone(),
        delta_t: normalize(&series.delta_t, stats.delta_t)?,
        distance: normalize(&series.distance, stats.distance)?,
        weekday: series.weekday.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn trip(start: i64) -> TripRecord {
        TripRecord {
            vehicle_id: "v".into(),
            start_time: start,
            end_time: start + 60,
            distance_km: 5.0,
        }
    }

    #[test]
    fn delta_between_starts() {
        let s = build_features(&[trip(1000), trip(4600)], chrono_tz::UTC).unwrap();
        assert_eq!(s.delta_t, vec![3600.0]);
        assert_eq!(s.start_time, vec![4600]);
    }

    #[test]
    fn equal_starts_fail_validation() {
        let err = build_features(&[trip(1000), trip(1000)], chrono_tz::UTC).unwrap_err();
        assert!(matches!(err, DataError::Validation(_)));
    }

    #[test]
    fn single_trip_is_insufficient() {
        let err = build_features(&[trip(1000)], chrono_tz::UTC).unwrap_err();
        assert!(matches!(err, DataError::InsufficientHistory { found: 1, .. }));
    }

    #[test]
    fn monday_morning_is_weekday_zero() {
        let tz: Tz = DEFAULT_TIMEZONE.parse().unwrap();
        // 2024-03-04 is a Monday
        let local = tz
            .from_local_datetime(
                &NaiveDate::from_ymd_opt(2024, 3, 4)
                    .unwrap()
                    .and_hms_opt(8, 0, 0)
                    .unwrap(),
            )
            .single()
            .unwrap();
        assert_eq!(weekday_of(local.timestamp(), tz), 0);
        // 00:30 local Monday is still Sunday in UTC
        let early = tz
            .from_local_datetime(
                &NaiveDate::from_ymd_opt(2024, 3, 4)
                    .unwrap()
                    .and_hms_opt(0, 30, 0)
                    .unwrap(),
            )
            .single()
            .unwrap();
        assert_eq!(weekday_of(early.timestamp(), tz), 0);
        assert_eq!(weekday_of(early.timestamp(), chrono_tz::UTC), 6);
    }

    #[test]
    fn normalize_examples() {
        let r = FeatureRange { min: 2.0, max: 10.0 };
        assert_eq!(normalize(&[2.0, 4.0, 10.0], r).unwrap(), vec![0.0, 0.25, 1.0]);
        assert_eq!(normalize(&[12.0], r).unwrap(), vec![1.25]);
        let flat = FeatureRange { min: 3.0, max: 3.0 };
        assert!(matches!(normalize(&[3.0], flat), Err(DataError::DegenerateFeature(_))));
    }

    proptest! {
        #[test]
        fn normalize_round_trip(values in prop::collection::vec(-1e6f64..1e6, 1..50),
                                lo in -1e3f64..1e3, width in 1e-2f64..1e5) {
            let r = FeatureRange { min: lo, max: lo + width };
            let back = denormalize(&normalize(&values, r).unwrap(), r);
            for (a, b) in values.iter().zip(&back) {
                let scale = a.abs().max(lo.abs()).max((lo + width).abs()).max(1.0);
                prop_assert!((a - b).abs() <= 1e-12 * scale);
            }
        }
    }
}
