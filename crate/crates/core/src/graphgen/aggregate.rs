//! Merging of spatially adjacent, temporally similar regions into virtual
//! nodes.

use serde::{Deserialize, Serialize};

use super::{pearson, GraphError, RegionStats};
use crate::ingest::GridSpec;

/// A vertex of the virtual graph: one or more grid cells treated as a unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualNode {
    pub id: usize,
    /// Member cell indices, ascending. The first one is the seed.
    pub members: Vec<usize>,
    /// Unweighted mean of member cell centers, `(lat, lon)` degrees.
    pub centroid: (f64, f64),
    /// Elementwise sum of member series over the training window.
    #[serde(skip)]
    pub series: Vec<f64>,
}

/// 8-neighborhood adjacency among `cells` (grid indices, any order).
///
/// Returns, for each position in `cells`, the positions of its neighbors in
/// ascending position order.
pub fn spatial_neighbors(cells: &[usize], grid: &GridSpec) -> Vec<Vec<usize>> {
    let mut position = vec![usize::MAX; grid.cells()];
    for (p, &c) in cells.iter().enumerate() {
        position[c] = p;
    }
    cells
        .iter()
        .map(|&c| {
            let (r, col) = grid.row_col(c);
            let mut out = Vec::with_capacity(8);
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (nr, nc) = (r as i64 + dr, col as i64 + dc);
                    if nr < 0 || nc < 0 || nr >= grid.rows as i64 || nc >= grid.cols as i64 {
                        continue;
                    }
                    let p = position[nr as usize * grid.cols + nc as usize];
                    if p != usize::MAX {
                        out.push(p);
                    }
                }
            }
            out.sort_unstable();
            out
        })
        .collect()
}

/// Greedy aggregation of retained regions.
///
/// Regions are visited in ascending cell order. An unvisited seed gathers its
/// unvisited spatial neighbors whose correlation with it exceeds `epsilon`;
/// a gathered neighbor is dropped again if some neighbor of its own (under
/// the same definition) correlates with it more strongly than the seed does.
/// The seed and surviving neighbors form one node and are marked visited.
/// Regions never visited become singleton nodes.
pub fn aggregate_regions(retained: &[RegionStats], epsilon: f64, grid: &GridSpec) -> Result<Vec<VirtualNode>, GraphError> {
    if !(epsilon > -1.0 && epsilon <= 1.0) {
        return Err(GraphError::InvalidParam(format!("epsilon {epsilon} outside (-1, 1]")));
    }
    let mut order: Vec<usize> = (0..retained.len()).collect();
    order.sort_by_key(|&p| retained[p].cell_id);
    let sorted: Vec<&RegionStats> = order.iter().map(|&p| &retained[p]).collect();
    let cells: Vec<usize> = sorted.iter().map(|s| s.cell_id).collect();
    if let Some(&bad) = cells.iter().find(|&&c| c >= grid.cells()) {
        return Err(GraphError::InvalidParam(format!("cell {bad} outside the {}-cell grid", grid.cells())));
    }
    let neighbors = spatial_neighbors(&cells, grid);

    // Correlations are only ever needed between spatial neighbors.
    let mut corr: Vec<Vec<f64>> = Vec::with_capacity(cells.len());
    for (p, nb) in neighbors.iter().enumerate() {
        let row = nb
            .iter()
            .map(|&q| pearson(&sorted[p].series, &sorted[q].series).map(|c| c.r))
            .collect::<Result<Vec<_>, _>>()?;
        corr.push(row);
    }
    let r = |p: usize, q: usize| -> f64 {
        let k = neighbors[p].binary_search(&q).expect("neighbor pair");
        corr[p][k]
    };

    let mut visited = vec![false; cells.len()];
    let similar = |p: usize, visited: &[bool]| -> Vec<usize> {
        neighbors[p]
            .iter()
            .copied()
            .filter(|&q| !visited[q] && r(p, q) > epsilon)
            .collect()
    };

    let mut groups: Vec<Vec<usize>> = Vec::new();
    for seed in 0..cells.len() {
        if visited[seed] {
            continue;
        }
        let candidates = similar(seed, &visited);
        if candidates.is_empty() {
            continue;
        }
        let members: Vec<usize> = candidates
            .iter()
            .copied()
            .filter(|&j| {
                let r_seed = r(seed, j);
                !similar(j, &visited).into_iter().any(|k| r(k, j) > r_seed)
            })
            .collect();
        visited[seed] = true;
        for &j in &members {
            visited[j] = true;
        }
        let mut group = vec![seed];
        group.extend(members);
        groups.push(group);
    }
    groups.extend((0..cells.len()).filter(|&p| !visited[p]).map(|p| vec![p]));
    for g in &mut groups {
        g.sort_unstable();
    }
    groups.sort_unstable_by_key(|g| g[0]);

    let t = sorted[0].series.len();
    Ok(groups
        .into_iter()
        .enumerate()
        .map(|(id, g)| {
            let mut series = vec![0.0; t];
            let (mut lat, mut lon) = (0.0, 0.0);
            for &p in &g {
                for (s, v) in series.iter_mut().zip(&sorted[p].series) {
                    *s += v;
                }
                let (a, b) = grid.cell_center(cells[p]);
                lat += a;
                lon += b;
            }
            let n = g.len() as f64;
            VirtualNode {
                id,
                members: g.iter().map(|&p| cells[p]).collect(),
                centroid: (lat / n, lon / n),
                series,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(rows: usize, cols: usize) -> GridSpec {
        GridSpec::new(0.0, rows as f64, 0.0, cols as f64, rows, cols).unwrap()
    }

    fn region(cell_id: usize, series: Vec<f64>) -> RegionStats {
        let mean_demand = series.iter().sum::<f64>() / series.len() as f64;
        RegionStats {
            cell_id,
            mean_demand,
            series,
        }
    }

    #[test]
    fn neighborhoods() {
        let g = grid(3, 3);
        let all: Vec<usize> = (0..9).collect();
        let nb = spatial_neighbors(&all, &g);
        assert_eq!(nb[4].len(), 8);
        assert_eq!(nb[0], vec![1, 3, 4]);
        // diagonal pair, isolated cell
        let nb = spatial_neighbors(&[0, 4, 2], &g);
        assert_eq!(nb[0], vec![1]);
        assert_eq!(nb[1], vec![0, 2]);
        let nb = spatial_neighbors(&[0, 8], &g);
        assert!(nb[0].is_empty() && nb[1].is_empty());
    }

    #[test]
    fn epsilon_one_gives_singletons() {
        let s = vec![1.0, 3.0, 2.0, 5.0];
        let regions: Vec<RegionStats> = (0..4).map(|c| region(c, s.clone())).collect();
        let nodes = aggregate_regions(&regions, 1.0, &grid(2, 2)).unwrap();
        assert_eq!(nodes.len(), 4);
        assert!(nodes.iter().all(|n| n.members.len() == 1));
    }

    #[test]
    fn identical_neighbors_merge() {
        let s = vec![1.0, 3.0, 2.0, 5.0];
        let regions = vec![region(0, s.clone()), region(1, s.clone())];
        let nodes = aggregate_regions(&regions, 0.5, &grid(1, 2)).unwrap();
        assert_eq!(nodes.len(), 1);
        assert_eq!(nodes[0].members, vec![0, 1]);
        assert_eq!(nodes[0].series, vec![2.0, 6.0, 4.0, 10.0]);
        assert_eq!(nodes[0].centroid, (0.5, 1.0));
    }

    #[test]
    fn stronger_rival_prunes_member() {
        // 1x3 strip: a - b - c. r(a,b) = 0.6, r(b,c) = 1 > r(a,b): b leaves a's group.
        let a = vec![1.0, 2.0, 3.0, 4.0];
        let b = vec![2.0, 1.0, 4.0, 3.0];
        let regions = vec![region(0, a), region(1, b.clone()), region(2, b)];
        let nodes = aggregate_regions(&regions, 0.5, &grid(1, 3)).unwrap();
        let members: Vec<Vec<usize>> = nodes.iter().map(|n| n.members.clone()).collect();
        assert_eq!(members, vec![vec![0], vec![1, 2]]);
    }

    #[test]
    fn rejects_bad_epsilon() {
        let regions = vec![region(0, vec![1.0, 2.0])];
        assert!(aggregate_regions(&regions, -1.0, &grid(1, 1)).is_err());
        assert!(aggregate_regions(&regions, 1.5, &grid(1, 1)).is_err());
    }
}
