//! JSON form of a [`VirtualGraphSet`].
//!
//! Node series are not stored; re-derive them from the demand tensor with
//! [`VirtualGraphSet::groups`].

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Adjacency, GraphError, GraphKind, GraphParams, VirtualGraphSet, VirtualNode};

pub const DOCUMENT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeEntry {
    pub id: usize,
    pub members: Vec<usize>,
    pub centroid: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsEntry {
    pub delta: f64,
    pub epsilon: f64,
    pub top_frac: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDocument {
    pub version: u32,
    pub params: Option<ParamsEntry>,
    pub nodes: Vec<NodeEntry>,
    pub graphs: BTreeMap<GraphKind, Vec<[usize; 2]>>,
}

impl GraphDocument {
    pub fn from_set(set: &VirtualGraphSet, params: Option<GraphParams>) -> Self {
        Self {
            version: DOCUMENT_VERSION,
            params: params.map(|p| ParamsEntry {
                delta: p.delta,
                epsilon: p.epsilon,
                top_frac: p.top_frac,
            }),
            nodes: set
                .nodes
                .iter()
                .map(|n| NodeEntry {
                    id: n.id,
                    members: n.members.clone(),
                    centroid: [n.centroid.0, n.centroid.1],
                })
                .collect(),
            graphs: set
                .graphs()
                .into_iter()
                .map(|(k, a)| (k, a.edges().into_iter().map(|(i, j)| [i, j]).collect()))
                .collect(),
        }
    }

    /// Rebuilds the graph set with empty node series.
    pub fn into_set(self) -> Result<VirtualGraphSet, GraphError> {
        if self.version != DOCUMENT_VERSION {
            return Err(GraphError::Document(format!("unsupported version {}", self.version)));
        }
        let n = self.nodes.len();
        if n < 2 {
            return Err(GraphError::TooFewNodes(n));
        }
        for (k, node) in self.nodes.iter().enumerate() {
            if node.id != k || node.members.is_empty() {
                return Err(GraphError::Document(format!("node entry {k} is malformed")));
            }
        }
        let mut graphs = self.graphs;
        let mut take = |kind: GraphKind| -> Result<Option<Adjacency>, GraphError> {
            graphs
                .remove(&kind)
                .map(|edges| {
                    let pairs: Vec<(usize, usize)> = edges.iter().map(|e| (e[0], e[1])).collect();
                    Adjacency::from_edges(n, &pairs)
                })
                .transpose()
        };
        let missing = |kind: GraphKind| GraphError::Document(format!("missing {} graph", kind.name()));
        let distance = take(GraphKind::Distance)?.ok_or_else(|| missing(GraphKind::Distance))?;
        let correlation = take(GraphKind::Correlation)?.ok_or_else(|| missing(GraphKind::Correlation))?;
        let mobility = take(GraphKind::Mobility)?;
        Ok(VirtualGraphSet {
            nodes: self
                .nodes
                .into_iter()
                .map(|e| VirtualNode {
                    id: e.id,
                    members: e.members,
                    centroid: (e.centroid[0], e.centroid[1]),
                    series: Vec::new(),
                })
                .collect(),
            distance,
            correlation,
            mobility,
        })
    }

    pub fn to_json(&self) -> Result<String, GraphError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

pub fn save(path: &Path, set: &VirtualGraphSet, params: Option<GraphParams>) -> Result<(), GraphError> {
    let text = GraphDocument::from_set(set, params).to_json()?;
    fs::write(path, text).map_err(|source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load(path: &Path) -> Result<VirtualGraphSet, GraphError> {
    let text = fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str::<GraphDocument>(&text)?.into_set()
}
