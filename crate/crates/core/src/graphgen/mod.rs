//! Virtual graph generation: sparse-region filtering, neighbor aggregation
//! and top-k adjacency construction.

mod adjacency;
mod aggregate;
pub mod io;
mod pearson;
mod stats;

use std::ops::Range;

pub use adjacency::{build_adjacency, build_graphs, haversine_km, mobility_score, region_distance, top_k, Adjacency};
pub use aggregate::{aggregate_regions, spatial_neighbors, VirtualNode};
pub use pearson::{pearson, Correlation};
pub use stats::{compute_stats, discard_sparse, RegionStats};

use crate::ingest::{DemandTensor, OdTensor};

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("empty range: {0}")]
    EmptyRange(String),
    #[error("no significant regions at this δ ({delta})")]
    NoSignificantRegions { delta: f64 },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("need at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("demand tensor carries no grid")]
    MissingGrid,
    #[error("graph document: {0}")]
    Document(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cannot access {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKind {
    Distance,
    Correlation,
    Mobility,
}

impl GraphKind {
    pub const ALL: [GraphKind; 3] = [GraphKind::Distance, GraphKind::Correlation, GraphKind::Mobility];

    pub fn name(self) -> &'static str {
        match self {
            GraphKind::Distance => "distance",
            GraphKind::Correlation => "correlation",
            GraphKind::Mobility => "mobility",
        }
    }
}

/// Nodes plus their distance, correlation and (optionally) mobility graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualGraphSet {
    pub nodes: Vec<VirtualNode>,
    pub distance: Adjacency,
    pub correlation: Adjacency,
    pub mobility: Option<Adjacency>,
}

impl VirtualGraphSet {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of graphs: 3 with mobility, else 2.
    pub fn graph_count(&self) -> usize {
        2 + self.mobility.is_some() as usize
    }

    /// Graphs in fixed order: distance, correlation, mobility.
    pub fn graphs(&self) -> Vec<(GraphKind, &Adjacency)> {
        let mut out = vec![(GraphKind::Distance, &self.distance), (GraphKind::Correlation, &self.correlation)];
        if let Some(m) = &self.mobility {
            out.push((GraphKind::Mobility, m));
        }
        out
    }

    pub fn graph(&self, kind: GraphKind) -> Option<&Adjacency> {
        match kind {
            GraphKind::Distance => Some(&self.distance),
            GraphKind::Correlation => Some(&self.correlation),
            GraphKind::Mobility => self.mobility.as_ref(),
        }
    }

    /// Member cell lists, one per node.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        self.nodes.iter().map(|n| n.members.clone()).collect()
    }
}

/// Thresholds for [`construct`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphParams {
    pub delta: f64,
    pub epsilon: f64,
    pub top_frac: f64,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self {
            delta: 1.0,
            epsilon: 0.5,
            top_frac: 0.1,
        }
    }
}

/// Full pipeline: statistics over `train`, filtering, aggregation, graphs.
pub fn construct(
    demand: &DemandTensor,
    od: Option<&OdTensor>,
    train: Range<usize>,
    params: GraphParams,
) -> Result<VirtualGraphSet, GraphError> {
    let grid = demand.grid.as_ref().ok_or(GraphError::MissingGrid)?;
    if demand.units() != grid.cells() {
        return Err(GraphError::LengthMismatch(demand.units(), grid.cells()));
    }
    let stats = compute_stats(demand, train)?;
    let retained = discard_sparse(&stats, params.delta)?;
    log::info!("retained {} of {} regions at delta {}", retained.len(), stats.len(), params.delta);
    let nodes = aggregate_regions(&retained, params.epsilon, grid)?;
    log::info!("aggregated into {} virtual nodes", nodes.len());
    build_graphs(nodes, od, params.top_frac)
}
