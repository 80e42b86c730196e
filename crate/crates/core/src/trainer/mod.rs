//! Splitting, normalization, windowing, the training loop and synthetic data.

mod data;
mod synth;
mod train;

pub use data::{make_windows, split, Normalizer, SeriesMatrix, Splits, WindowedDataset};
pub use synth::{synth_generate, SynthData, SynthSpec, SYNTH_T0};
pub use train::{
    evaluate_loss, predict_normalized, smooth_l1, smooth_l1_loss, train, write_history, EpochRecord, TrainConfig,
    TrainReport,
};

use crate::diffcore::TensorError;
use crate::ingest::IngestError;
use crate::model::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("split: {0}")]
    Split(String),
    #[error("shape: {0}")]
    Shape(String),
    #[error("config: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}
