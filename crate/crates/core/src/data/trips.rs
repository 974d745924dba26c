use serde::{Deserialize, Serialize};

use super::{DataError, Result};

/// Trips closer than this (previous end to next start) are one trip.
pub const MERGE_GAP_SECS: i64 = 600;

/// Trips shorter than this are discarded.
pub const MIN_TRIP_KM: f64 = 3.0;

/// One logged trip. Times are UTC epoch seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub vehicle_id: String,
    pub start_time: i64,
    pub end_time: i64,
    pub distance_km: f64,
}

impl TripRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.end_time < self.start_time {
            return Err(format!(
                "end_time {} precedes start_time {}",
                self.end_time, self.start_time
            ));
        }
        if !(self.distance_km >= 0.0) || !self.distance_km.is_finite() {
            return Err(format!("distance_km {} must be finite and >= 0", self.distance_km));
        }
        Ok(())
    }
}

fn check_sorted(trips: &[TripRecord]) -> Result<()> {
    for (i, pair) in trips.windows(2).enumerate() {
        if pair[1].vehicle_id != pair[0].vehicle_id || pair[1].start_time < pair[0].start_time {
            return Err(DataError::Ordering {
                vehicle: pair[1].vehicle_id.clone(),
                index: i + 1,
            });
        }
    }
    Ok(())
}

/// Merges consecutive trips of one vehicle whose gap (next start minus
/// previous end) is at most ten minutes. The merged trip keeps the first
/// start, the latest end and the summed distance.
pub fn merge_trips(trips: &[TripRecord]) -> Result<Vec<TripRecord>> {
    check_sorted(trips)?;
    let mut out: Vec<TripRecord> = Vec::with_capacity(trips.len());
    for trip in trips {
        match out.last_mut() {
            Some(prev) if trip.start_time - prev.end_time <= MERGE_GAP_SECS => {
                prev.end_time = prev.end_time.max(trip.end_time);
                prev.distance_km += trip.distance_km;
            }
            _ => out.push(trip.clone()),
        }
    }
    Ok(out)
}

/// Drops trips shorter than [`MIN_TRIP_KM`]; exactly 3 km is kept.
pub fn filter_short(trips: Vec<TripRecord>) -> Vec<TripRecord> {
    trips.into_iter().filter(|t| t.distance_km >= MIN_TRIP_KM).collect()
}
