//! Trip ingestion, cleaning, feature construction and windowing.
//!
//! The pipeline order is fixed: merge → filter → features → split →
//! normalize → window. [`prepare_dataset`] runs all of it for a fleet.

mod csv_io;
mod features;
mod pipeline;
mod synthetic;
mod trips;
mod windows;

use thiserror::Error;

pub use csv_io::{ingest_csv, read_trips, write_trips, TRIPS_HEADER};
pub use features::{
    build_features, denormalize, normalize, normalize_series, weekday_of, FeatureRange, FeatureSeries, NormStats,
    DEFAULT_TIMEZONE,
};
pub use pipeline::{group_by_vehicle, prepare_dataset, prepare_dataset_with, DataConfig, Dataset, SplitFractions};
pub use synthetic::{generate_synthetic, SyntheticSpec};
pub use trips::{filter_short, merge_trips, TripRecord, MERGE_GAP_SECS, MIN_TRIP_KM};
pub use windows::{
    latest_window, make_windows, window_indices, SequenceSample, WindowIndex, FEATURE_COUNT, FEATURE_GROUPS,
    WEEKDAY_OFFSET,
};

pub const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("trips for vehicle {vehicle} are not sorted by start time at index {index}")]
    Ordering { vehicle: String, index: usize },
    #[error("vehicle {vehicle} has {found} trips, at least 2 are needed")]
    InsufficientHistory { vehicle: String, found: usize },
    #[error("line {line}: {message}")]
    Line { line: u64, message: String },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("feature {0} has max == min; cannot normalize")]
    DegenerateFeature(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;
