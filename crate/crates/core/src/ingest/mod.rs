//! Trip-record parsing, grid assignment and time binning.

mod demand;
pub mod format;
mod grid;
mod trips;

use std::path::PathBuf;

pub use demand::{bin_demand, build_od, Binned, DemandTensor, OdTensor};
pub use grid::GridSpec;
pub use trips::{parse_shards, parse_trips, Column, ParsedTrips, TripRecord, TripSchema};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{path}: {malformed} of {rows} rows are malformed")]
    TooManyMalformed { path: PathBuf, malformed: usize, rows: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("schema: {0}")]
    Schema(String),
    #[error("invalid time window: {0}")]
    InvalidWindow(String),
    #[error("mobility graph unavailable: no record carries dropoff coordinates")]
    MobilityUnavailable,
    #[error("format: {0}")]
    Format(String),
}
