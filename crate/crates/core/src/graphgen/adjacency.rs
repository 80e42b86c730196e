use serde::{Deserialize, Serialize};

use super::{pearson, GraphError, VirtualGraphSet, VirtualNode};
use crate::ingest::OdTensor;
use crate::par;

const EARTH_RADIUS_KM: f64 = 6371.0;

/// Binary symmetric adjacency matrix, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Adjacency {
    n: usize,
    data: Vec<bool>,
}

impl Adjacency {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            data: vec![false; n * n],
        }
    }

    /// Builds from an undirected edge list; self-loops are rejected.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let mut a = Self::empty(n);
        for &(i, j) in edges {
            if i >= n || j >= n || i == j {
                return Err(GraphError::Document(format!("invalid edge ({i}, {j}) for {n} nodes")));
            }
            a.set(i, j);
            a.set(j, i);
        }
        Ok(a)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.n + j]
    }

    fn set(&mut self, i: usize, j: usize) {
        self.data[i * self.n + j] = true;
    }

    pub fn degree(&self, i: usize) -> usize {
        self.data[i * self.n..(i + 1) * self.n].iter().filter(|&&b| b).count()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn has_zero_diagonal(&self) -> bool {
        (0..self.n).all(|i| !self.get(i, i))
    }

    /// Upper-triangle edges `(i, j)` with `i < j`, lexicographic.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.n)
            .flat_map(|i| (i + 1..self.n).filter(move |&j| self.get(i, j)).map(move |j| (i, j)))
            .collect()
    }

    /// 0/1 matrix as `f64`, row-major.
    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&b| b as u8 as f64).collect()
    }
}

/// Great-circle distance between `(lat, lon)` points in degrees.
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (p1, p2) = (a.0.to_radians(), b.0.to_radians());
    let dp = p2 - p1;
    let dl = (b.1 - a.1).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

pub fn region_distance(a: &VirtualNode, b: &VirtualNode) -> f64 {
    haversine_km(a.centroid, b.centroid)
}

/// Trips between the members of `a` and `b`, both directions.
pub fn mobility_score(od: &OdTensor, a: &VirtualNode, b: &VirtualNode) -> u64 {
    let mut total = 0;
    for &x in &a.members {
        for &y in &b.members {
            total += od.get(x, y) + od.get(y, x);
        }
    }
    total
}

/// `max(1, floor(frac * (n - 1)))`.
pub fn top_k(n: usize, frac: f64) -> usize {
    ((frac * (n - 1) as f64).floor() as usize).max(1)
}

/// Row-wise top-k selection over an `n`×`n` score matrix, union-symmetrized.
///
/// Diagonal scores are ignored. Ties go to the lower column index.
pub fn build_adjacency(scores: &[f64], n: usize, frac: f64) -> Result<Adjacency, GraphError> {
    if n < 2 {
        return Err(GraphError::TooFewNodes(n));
    }
    if scores.len() != n * n {
        return Err(GraphError::LengthMismatch(scores.len(), n * n));
    }
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(GraphError::InvalidParam(format!("top fraction {frac} outside (0, 1]")));
    }
    if let Some(p) = (0..n * n).find(|&p| p / n != p % n && scores[p].is_nan()) {
        return Err(GraphError::InvalidParam(format!("NaN score at ({}, {})", p / n, p % n)));
    }
    let k = top_k(n, frac);
    let mut adj = Adjacency::empty(n);
    for i in 0..n {
        let row = &scores[i * n..(i + 1) * n];
        let mut cols: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        cols.sort_by(|&x, &y| row[y].total_cmp(&row[x]).then(x.cmp(&y)));
        for &j in &cols[..k] {
            adj.set(i, j);
            adj.set(j, i);
        }
    }
    Ok(adj)
}

fn score_matrix<F>(n: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, usize) -> f64 + Send + Sync,
{
    par::map_range(n, |i| (0..n).map(|j| if i == j { 0.0 } else { f(i, j) }).collect::<Vec<_>>())
        .into_iter()
        .flatten()
        .collect()
}

/// Builds the graph set. Distance scores are reciprocal distances (coincident
/// centroids score `+inf`); correlation scores are Pearson coefficients of the
/// node series; mobility uses [`mobility_score`] when `od` is given.
pub fn build_graphs(nodes: Vec<VirtualNode>, od: Option<&OdTensor>, frac: f64) -> Result<VirtualGraphSet, GraphError> {
    let n = nodes.len();
    if n < 2 {
        return Err(GraphError::TooFewNodes(n));
    }
    if let Some(od) = od {
        if let Some(&bad) = nodes.iter().flat_map(|v| &v.members).find(|&&c| c >= od.units()) {
            return Err(GraphError::InvalidParam(format!("cell {bad} outside the {}-unit OD tensor", od.units())));
        }
    }
    for v in &nodes[1..] {
        if v.series.len() != nodes[0].series.len() {
            return Err(GraphError::LengthMismatch(v.series.len(), nodes[0].series.len()));
        }
    }
    let distance = score_matrix(n, |i, j| 1.0 / region_distance(&nodes[i], &nodes[j]));
    let corr: Vec<Result<Vec<f64>, GraphError>> = par::map_range(n, |i| {
        (0..n)
            .map(|j| if i == j { Ok(0.0) } else { pearson(&nodes[i].series, &nodes[j].series).map(|c| c.r) })
            .collect()
    });
    let mut correlation = Vec::with_capacity(n * n);
    for row in corr {
        correlation.extend(row?);
    }
    let mobility = od
        .map(|od| build_adjacency(&score_matrix(n, |i, j| mobility_score(od, &nodes[i], &nodes[j]) as f64), n, frac))
        .transpose()?;
    Ok(VirtualGraphSet {
        distance: build_adjacency(&distance, n, frac)?,
        correlation: build_adjacency(&correlation, n, frac)?,
        mobility,
        nodes,
    })
}
