//! Boarding records to aligned model samples.

mod grid;
mod periods;
mod prepare;
mod scaler;
mod synth;
mod windows;


pub use grid::{
    aggregate, format_timestamp, parse_timestamp, read_records, write_grid, write_records, Aggregation,
    RidershipGrid, RidershipRecord, ServiceWindow, TIMESTAMP_FORMAT,
};
pub use periods::{split_periods, Period, PeriodSpec};
pub use prepare::{prepare_samples, PeriodSamples, PreparedData};
pub use scaler::ScalerParams;
pub use synth::{
    read_manifest, station_id, synth_generate, write_manifest, Archetype, Manifest, ManifestStation, SynthConfig,
    SyntheticDataset,
};
pub use windows::{
    block, first_target_row, historical_block, make_windows, make_windows_in, window_at, SampleWindow, WindowSet,
};

use crate::io::IoError;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("interval of {0} minutes does not divide an hour")]
    InvalidInterval(u32),
    #[error("invalid service window {0}")]
    InvalidServiceWindow(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("unknown station ids: {}", .0.join(", "))]
    UnknownStations(Vec<String>),
    #[error("no data: {0}")]
    Empty(String),
    #[error("scaler needs at least one training row")]
    NoTrainingRows,
    #[error("periods `{0}` and `{1}` overlap")]
    OverlappingPeriods(String, String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] IoError),
}
