//! Metrics, naive baselines, experiment assembly and the ablation harness.

mod experiment;
mod metrics;
mod report;

pub use experiment::{
    baseline_historic_mean, baseline_last_value, compare_within_noise, forecast, masks_for, prepare, run_ablation, run_variant,
    AblationRow, Comparison, Experiment, VariantRun, VariantSpec, FULL_MODEL,
};
pub use metrics::{hot_nodes, mae, mape_topk, rmse};
pub use report::{metrics_table, ForecastReport, Metrics, HOT_FRACTION};

use crate::graphgen::GraphError;
use crate::ingest::IngestError;
use crate::model::ModelError;
use crate::trainer::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("empty input")]
    Empty,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("{0}")]
    Invalid(String),
    #[error("mobility graph unavailable for: {}", .0.join(", "))]
    Unavailable(Vec<String>),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("cannot write {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}
