//! Deterministic synthetic fleet.
//!
//! Each vehicle is either a commuter (two weekday trips at habitual times
//! plus occasional errands) or an errand driver (Poisson-timed out-and-back
//! trips). Per-vehicle habits (departure hour, commute length, day off,
//! weekly shopping trip) make history predictive of the next trip.

use chrono::{Datelike, NaiveDate, TimeZone};
use chrono_tz::Tz;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{DataError, Result, TripRecord, DEFAULT_TIMEZONE, SECONDS_PER_DAY};
use crate::seed;

/// Fleet parameters. Readable from a TOML key-value file; missing keys take
/// the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub vehicles: usize,
    pub days: u32,
    /// Probability that a vehicle follows a commute schedule.
    pub commute_prob: f64,
    /// Standard deviation of departure-time jitter.
    pub noise_minutes: f64,
    pub distance_lognorm_mu: f64,
    pub distance_lognorm_sigma: f64,
    pub seed: u64,
    /// Mean errands per day for commuters; non-commuters run twice as many.
    pub errand_rate: f64,
    /// Probability a commuter skips a working day.
    pub skip_prob: f64,
    /// Probability a trip is logged as two pieces a few minutes apart.
    pub split_prob: f64,
    /// First simulated day (local calendar), `YYYY-MM-DD`.
    pub start_date: String,
    pub timezone: String,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            vehicles: 50,
            days: 180,
            commute_prob: 0.7,
            noise_minutes: 10.0,
            distance_lognorm_mu: 2.1,
            distance_lognorm_sigma: 0.6,
            seed: 0,
            errand_rate: 0.5,
            skip_prob: 0.05,
            split_prob: 0.05,
            start_date: "2023-01-02".into(),
            timezone: DEFAULT_TIMEZONE.into(),
        }
    }
}

impl SyntheticSpec {
    /// Commuters only, no errands, jitter, skipped days or split logs.
    pub fn commuter_only(vehicles: usize, days: u32, seed: u64) -> Self {
        Self {
            vehicles,
            days,
            commute_prob: 1.0,
            noise_minutes: 0.0,
            errand_rate: 0.0,
            skip_prob: 0.0,
            split_prob: 0.0,
            seed,
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| DataError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        if self.vehicles == 0 {
            return Err(DataError::Config("vehicles must be at least 1".into()));
        }
        if self.days == 0 {
            return Err(DataError::Config("days must be at least 1".into()));
        }
        if !unit(self.commute_prob) || !unit(self.skip_prob) || !unit(self.split_prob) {
            return Err(DataError::Config("probabilities must lie in [0, 1]".into()));
        }
        if !(self.noise_minutes >= 0.0) || !(self.errand_rate >= 0.0) {
            return Err(DataError::Config("noise_minutes and errand_rate must be >= 0".into()));
        }
        if !(self.distance_lognorm_sigma > 0.0) || !self.distance_lognorm_mu.is_finite() {
            return Err(DataError::Config("invalid log-normal distance parameters".into()));
        }
        Ok(())
    }

    /// Epoch of local midnight on `start_date` and that day's weekday (Monday = 0).
    fn start_epoch(&self) -> Result<(i64, u32)> {
        let tz: Tz = self
            .timezone
            .parse()
            .map_err(|e| DataError::Config(format!("timezone: {e}")))?;
        let date = NaiveDate::parse_from_str(&self.start_date, "%Y-%m-%d")
            .map_err(|e| DataError::Config(format!("start_date: {e}")))?;
        tz.from_local_datetime(&date.and_hms_opt(0, 0, 0).expect("midnight"))
            .earliest()
            .map(|dt| (dt.timestamp(), date.weekday().num_days_from_monday()))
            .ok_or_else(|| DataError::Config("start_date midnight does not exist".into()))
    }
}

struct Habits {
    commuter: bool,
    depart_secs: f64,
    work_secs: f64,
    commute_km: f64,
    day_off: Option<u32>,
    weekly_errand: Option<(u32, f64, f64)>,
    speed_kmh: f64,
}

const HOUR: f64 = 3600.0;

/// Generates the fleet, sorted by vehicle id then start time.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<TripRecord>> {
    spec.validate()?;
    let (epoch0, weekday0) = spec.start_epoch()?;
    let base_seed = seed::derive(spec.seed, seed::stream::SYNTHETIC);
    let mut fleet = Vec::new();
    for v in 0..spec.vehicles {
        let mut rng = seed::rng(base_seed, v as u64);
        fleet.extend(vehicle_trips(spec, epoch0, weekday0, &format!("veh-{v:04}"), &mut rng)?);
    }
    Ok(fleet)
}

fn vehicle_trips(
    spec: &SyntheticSpec,
    epoch0: i64,
    weekday0: u32,
    id: &str,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TripRecord>> {
    let bad = |e: rand_distr::NormalError| DataError::Config(e.to_string());
    let errand_dist = LogNormal::new(spec.distance_lognorm_mu, spec.distance_lognorm_sigma).map_err(bad)?;
    let commute_dist = LogNormal::new(spec.distance_lognorm_mu + 0.5, 0.35).map_err(bad)?;
    let jitter = Normal::new(0.0, spec.noise_minutes * 60.0).map_err(bad)?;
    let noisy = spec.noise_minutes > 0.0;

    let habits = Habits {
        commuter: rng.gen_bool(spec.commute_prob),
        depart_secs: rng.gen_range(6.5..9.0) * HOUR,
        work_secs: rng.gen_range(7.5..9.5) * HOUR,
        commute_km: commute_dist.sample(rng).max(3.5),
        day_off: rng.gen_bool(0.3).then(|| rng.gen_range(0..5)),
        weekly_errand: (spec.errand_rate > 0.0).then(|| {
            (
                rng.gen_range(0..7),
                rng.gen_range(9.0..18.0) * HOUR,
                errand_dist.sample(rng).max(3.0),
            )
        }),
        speed_kmh: rng.gen_range(35.0..60.0),
    };
    let rate = if habits.commuter {
        spec.errand_rate
    } else {
        2.0 * spec.errand_rate
    };
    let duration = |km: f64| (km / habits.speed_kmh * HOUR + 300.0).round();

    let mut trips: Vec<(f64, f64, f64)> = Vec::new();
    let out_and_back = |trips: &mut Vec<(f64, f64, f64)>, start: f64, km: f64, dwell: f64| {
        let d1 = duration(km);
        trips.push((start, start + d1, km));
        let back = start + d1 + dwell;
        trips.push((back, back + duration(km), km));
    };

    for day in 0..spec.days {
        let day_start = (epoch0 + day as i64 * SECONDS_PER_DAY) as f64;
        let weekday = (weekday0 + day) % 7;
        let jit = |rng: &mut ChaCha8Rng| if noisy { jitter.sample(rng) } else { 0.0 };

        if habits.commuter && weekday < 5 && habits.day_off != Some(weekday) {
            let skip = spec.skip_prob > 0.0 && rng.gen_bool(spec.skip_prob);
            if !skip {
                let leave = day_start + habits.depart_secs + jit(rng);
                let km = habits.commute_km;
                let back = leave + duration(km) + habits.work_secs + jit(rng);
                trips.push((leave, leave + duration(km), km));
                trips.push((back, back + duration(km), km));
            }
        }
        if let Some((wd, at, km)) = habits.weekly_errand {
            if wd == weekday {
                let start = day_start + at + jit(rng);
                out_and_back(&mut trips, start, km, 1.5 * HOUR);
            }
        }
        if rate > 0.0 {
            let boost = if weekday >= 5 { 1.5 } else { 1.0 };
            let count = Poisson::new(rate * boost).map(|p| p.sample(rng) as usize).unwrap_or(0);
            for _ in 0..count {
                let start = day_start + rng.gen_range(9.0..21.0) * HOUR;
                let km = errand_dist.sample(rng);
                let dwell = rng.gen_range(20.0..120.0) * 60.0;
                out_and_back(&mut trips, start, km, dwell);
            }
        }
    }

    trips.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut records: Vec<TripRecord> = Vec::with_capacity(trips.len());
    for (start, end, km) in trips {
        let (start, end) = (start.round() as i64, end.round() as i64);
        if records.last().is_some_and(|p| start < p.end_time) {
            continue;
        }
        let km = (km * 1000.0).round() / 1000.0;
        if spec.split_prob > 0.0 && rng.gen_bool(spec.split_prob) && end - start > 1200 {
            // GPS dropout: one drive logged as two pieces
            let gap = rng.gen_range(60..540);
            let cut = start + (end - start - gap) / 2;
            let first_km = (km * 0.5 * 1000.0).round() / 1000.0;
            records.push(record(id, start, cut, first_km));
            records.push(record(id, cut + gap, end, ((km - first_km) * 1000.0).round() / 1000.0));
        } else {
            records.push(record(id, start, end, km));
        }
    }
    Ok(records)
}

fn record(id: &str, start: i64, end: i64, km: f64) -> TripRecord {
    TripRecord {
        vehicle_id: id.to_string(),
        start_time: start,
        end_time: end,
        distance_km: km,
    }
}
