//! Seeded synthetic demand with planted spatial clusters.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::ingest::{DemandTensor, GridSpec, OdTensor};

pub const SYNTH_T0: i64 = 1_396_310_400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub cells: usize,
    pub clusters: usize,
    pub days: usize,
    pub bin_width: i64,
    pub seed: u64,
    /// Scale of the Poisson deviation: 0 gives the noiseless profile, 1 plain
    /// Poisson counts.
    pub noise: f64,
    /// Mean hourly demand per cluster, cycled when there are more clusters.
    pub base_rates: Vec<f64>,
    /// Relative amplitude of the daily sinusoid.
    pub amplitude: f64,
    /// Probability that a trip ends inside its own cluster.
    pub within_cluster: f64,
    /// Slots whose trips feed the OD matrix, counted from the start;
    /// `None` uses all slots.
    pub od_slots: Option<usize>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            cells: 36,
            clusters: 4,
            days: 60,
            bin_width: 3600,
            seed: 7,
            noise: 1.0,
            base_rates: vec![6.0, 10.0, 14.0, 8.0],
            amplitude: 0.8,
            within_cluster: 0.8,
            od_slots: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub demand: DemandTensor,
    pub od: OdTensor,
    /// Planted cluster of every cell.
    pub labels: Vec<usize>,
}

/// Largest divisor of `n` not above its square root.
fn near_square(n: usize) -> (usize, usize) {
    let mut r = (n as f64).sqrt() as usize;
    while r > 1 && !n.is_multiple_of(r) {
        r -= 1;
    }
    (r.max(1), n / r.max(1))
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.cells == 0 || self.clusters == 0 || self.clusters > self.cells || self.days == 0 {
            return bad(format!("need 0 < clusters <= cells and days > 0: {self:?}"));
        }
        if self.bin_width <= 0 || 86_400 % self.bin_width != 0 {
            return bad(format!("bin width {} must divide a day", self.bin_width));
        }
        if self.base_rates.is_empty() || self.base_rates.iter().any(|r| !(*r > 0.0)) {
            return bad("base rates must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.amplitude) || !(0.0..=1.0).contains(&self.within_cluster) || !(self.noise >= 0.0) {
            return bad("amplitude and within_cluster must lie in [0, 1], noise >= 0".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> GridSpec {
        let (rows, cols) = near_square(self.cells);
        GridSpec::new(40.70, 40.70 + 0.005 * rows as f64, -74.00, -74.00 + 0.005 * cols as f64, rows, cols)
            .expect("positive extent")
    }

    /// Clusters tile the grid in rectangular blocks.
    pub fn labels(&self) -> Vec<usize> {
        let grid = self.grid();
        let (cr, cc) = near_square(self.clusters);
        (0..self.cells)
            .map(|cell| {
                let (r, c) = grid.row_col(cell);
                let br = (r * cr / grid.rows).min(cr - 1);
                let bc = (c * cc / grid.cols).min(cc - 1);
                br * cc + bc
            })
            .collect()
    }

    /// Noise-free expected demand of cluster `k` at slot `t`.
    pub fn intensity(&self, k: usize, t: usize) -> f64 {
        let base = self.base_rates[k % self.base_rates.len()];
        let hour = (t as f64 * self.bin_width as f64 / 3600.0) % 24.0;
        let phase = 24.0 * k as f64 / self.clusters as f64;
        base * (1.0 + self.amplitude * (2.0 * PI * (hour - phase) / 24.0).sin())
    }
}

/// Demand, OD flows and planted labels for `spec`.
pub fn synth_generate(spec: &SynthSpec) -> Result<SynthData, TrainError> {
    spec.validate()?;
    let grid = spec.grid();
    let labels = spec.labels();
    let slots = spec.days * 86_400 / spec.bin_width as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut values = vec![0u64; slots * spec.cells];
    for t in 0..slots {
        for cell in 0..spec.cells {
            let lambda = spec.intensity(labels[cell], t);
            let draw = if lambda > 0.0 {
                Poisson::new(lambda).expect("positive rate").sample(&mut rng)
            } else {
                0.0
            };
            let v = (lambda + spec.noise * (draw - lambda)).round().max(0.0);
            values[t * spec.cells + cell] = v as u64;
        }
    }

    let members: Vec<Vec<usize>> = (0..spec.clusters)
        .map(|k| (0..spec.cells).filter(|&c| labels[c] == k).collect())
        .collect();
    let od_slots = spec.od_slots.unwrap_or(slots).min(slots);
    let mut counts = vec![0u64; spec.cells * spec.cells];
    for t in 0..od_slots {
        for from in 0..spec.cells {
            for _ in 0..values[t * spec.cells + from] {
                let to = if rng.random_bool(spec.within_cluster) {
                    let m = &members[labels[from]];
                    m[rng.random_range(0..m.len())]
                } else {
                    rng.random_range(0..spec.cells)
                };
                counts[from * spec.cells + to] += 1;
            }
        }
    }

    let t0 = SYNTH_T0;
    let t1 = t0 + od_slots as i64 * spec.bin_width;
    Ok(SynthData {
        demand: DemandTensor::new(slots, spec.cells, values, spec.bin_width, t0)?.with_grid(grid),
        od: OdTensor::new(spec.cells, counts, t0, t1)?.with_grid(grid),
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::pearson_two_pass;

    #[test]
    fn quadrant_labels() {
        let spec = SynthSpec::default();
        let labels = spec.labels();
        assert_eq!(&labels[..6], &[0, 0, 0, 1, 1, 1]);
        assert_eq!(&labels[30..], &[2, 2, 2, 3, 3, 3]);
        assert_eq!((0..4).map(|k| labels.iter().filter(|&&l| l == k).count()).collect::<Vec<_>>(), vec![9; 4]);
    }

    #[test]
    fn noiseless_clusters_are_collinear() {
        let spec = SynthSpec {
            noise: 0.0,
            days: 3,
            ..SynthSpec::default()
        };
        let d = synth_generate(&spec).unwrap();
        let s = |c: usize| d.demand.series(c, 0..d.demand.slots());
        assert!((pearson_two_pass(&s(0), &s(14)) - 1.0).abs() < 1e-12);
        assert_eq!(s(0), s(14));
    }

    #[test]
    fn seeded_and_flows_mostly_internal() {
        let spec = SynthSpec {
            days: 4,
            od_slots: Some(48),
            ..SynthSpec::default()
        };
        let a = synth_generate(&spec).unwrap();
        assert_eq!(a, synth_generate(&spec).unwrap());
        let picked: u64 = (0..48).map(|t| (0..36).map(|c| a.demand.get(t, c)).sum::<u64>()).sum();
        assert_eq!(a.od.total(), picked);
        let internal: u64 = (0..36)
            .flat_map(|i| (0..36).map(move |j| (i, j)))
            .filter(|&(i, j)| a.labels[i] == a.labels[j])
            .map(|(i, j)| a.od.get(i, j))
            .sum();
        assert!(internal as f64 > 0.75 * a.od.total() as f64);
    }
}
