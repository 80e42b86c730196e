use std::ops::Range;

use super::GraphError;
use crate::ingest::DemandTensor;

/// Training-window demand summary of one grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionStats {
    pub cell_id: usize,
    /// Mean demand per slot over the training window.
    pub mean_demand: f64,
    pub series: Vec<f64>,
}

/// One [`RegionStats`] per unit, computed over `train` slots only.
pub fn compute_stats(demand: &DemandTensor, train: Range<usize>) -> Result<Vec<RegionStats>, GraphError> {
    if train.is_empty() || train.end > demand.slots() {
        return Err(GraphError::EmptyRange(format!(
            "training range {train:?} invalid for {} slots",
            demand.slots()
        )));
    }
    Ok((0..demand.units())
        .map(|cell_id| {
            let series = demand.series(cell_id, train.clone());
            let mean_demand = series.iter().sum::<f64>() / series.len() as f64;
            RegionStats {
                cell_id,
                mean_demand,
                series,
            }
        })
        .collect())
}

/// Keeps regions whose mean demand is at least `delta` (sparse regions are
/// those strictly below it), preserving input order.
pub fn discard_sparse(stats: &[RegionStats], delta: f64) -> Result<Vec<RegionStats>, GraphError> {
    if !(delta >= 0.0) {
        return Err(GraphError::InvalidParam(format!("delta {delta} must be >= 0")));
    }
    let kept: Vec<RegionStats> = stats.iter().filter(|s| s.mean_demand >= delta).cloned().collect();
    if kept.is_empty() {
        return Err(GraphError::NoSignificantRegions { delta });
    }
    Ok(kept)
}
