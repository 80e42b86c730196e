use std::ops::Range;

use super::TrainError;
use crate::diffcore::Tensor;
use crate::ingest::DemandTensor;

/// Contiguous chronological train/validation/test ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

/// Split `slots` by `fractions` (train, val, test). Boundaries are
/// `floor(slots * cumulative fraction)`.
pub fn split(slots: usize, fractions: [f64; 3]) -> Result<Splits, TrainError> {
    if fractions.iter().any(|f| !(*f > 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(TrainError::Split(format!("fractions {fractions:?} must be positive and sum to 1")));
    }
    let cut = |f: f64| ((slots as f64 * f) + 1e-9).floor() as usize;
    let a = cut(fractions[0]).min(slots);
    let b = cut(fractions[0] + fractions[1]).min(slots);
    let s = Splits {
        train: 0..a,
        val: a..b,
        test: b..slots,
    };
    for (name, r) in [("train", &s.train), ("validation", &s.val), ("test", &s.test)] {
        if r.is_empty() {
            return Err(TrainError::Split(format!("{name} split of {slots} slots is empty")));
        }
    }
    Ok(s)
}

/// Row-major `[slots, nodes]` matrix of demand values.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesMatrix {
    slots: usize,
    nodes: usize,
    data: Vec<f64>,
}

impl SeriesMatrix {
    pub fn new(slots: usize, nodes: usize, data: Vec<f64>) -> Result<Self, TrainError> {
        if data.len() != slots * nodes {
            return Err(TrainError::Shape(format!("{} values for {slots}x{nodes}", data.len())));
        }
        Ok(Self { slots, nodes, data })
    }

    pub fn from_demand(d: &DemandTensor) -> Self {
        Self {
            slots: d.slots(),
            nodes: d.units(),
            data: d.values().iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, slot: usize, node: usize) -> f64 {
        self.data[slot * self.nodes + node]
    }

    pub fn row(&self, slot: usize) -> &[f64] {
        &self.data[slot * self.nodes..(slot + 1) * self.nodes]
    }

    /// Per-node mean over `range`.
    pub fn means(&self, range: Range<usize>) -> Vec<f64> {
        let len = range.len() as f64;
        let mut m = vec![0.0; self.nodes];
        for t in range {
            for (acc, v) in m.iter_mut().zip(self.row(t)) {
                *acc += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= len);
        m
    }
}

/// Per-node z-score parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    /// Population standard deviation; 1 where the training series is constant.
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit(series: &SeriesMatrix, train: Range<usize>) -> Result<Self, TrainError> {
        if train.is_empty() || train.end > series.slots() {
            return Err(TrainError::Split(format!("cannot fit on {train:?} of {} slots", series.slots())));
        }
        let mean = series.means(train.clone());
        let mut var = vec![0.0; series.nodes()];
        for t in train.clone() {
            for ((acc, v), m) in var.iter_mut().zip(series.row(t)).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / train.len() as f64).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn transform(&self, series: &SeriesMatrix) -> SeriesMatrix {
        let n = series.nodes();
        SeriesMatrix {
            slots: series.slots(),
            nodes: n,
            data: series
                .data()
                .iter()
                .enumerate()
                .map(|(p, v)| (v - self.mean[p % n]) / self.std[p % n])
                .collect(),
        }
    }

    pub fn inverse_value(&self, node: usize, z: f64) -> f64 {
        z * self.std[node] + self.mean[node]
    }

    pub fn inverse(&self, series: &SeriesMatrix) -> SeriesMatrix {
        let n = series.nodes();
        SeriesMatrix {
            slots: series.slots(),
            nodes: n,
            data: series
                .data()
                .iter()
                .enumerate()
                .map(|(p, &z)| self.inverse_value(p % n, z))
                .collect(),
        }
    }

    /// Normalized image of zero demand per node.
    pub fn zero_floor(&self) -> Vec<f64> {
        self.mean.iter().zip(&self.std).map(|(m, s)| -m / s).collect()
    }
}

/// Window start slots `k` over `range`: inputs `[k, k + window)`, target
/// `k + window`. Yields `range.len() - window` samples.
pub fn make_windows(range: Range<usize>, window: usize) -> Result<Vec<usize>, TrainError> {
    if window == 0 || range.len() <= window {
        return Err(TrainError::Split(format!(
            "range {range:?} is too short for window {window}"
        )));
    }
    Ok((range.start..range.end - window).collect())
}

/// Normalized series with splits and window starts per split.
#[derive(Debug, Clone)]
pub struct WindowedDataset {
    pub raw: SeriesMatrix,
    pub normalized: SeriesMatrix,
    pub norm: Normalizer,
    pub window: usize,
    pub splits: Splits,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl WindowedDataset {
    pub fn new(raw: SeriesMatrix, splits: Splits, window: usize) -> Result<Self, TrainError> {
        if splits.test.end > raw.slots() {
            return Err(TrainError::Split(format!("splits end at {} beyond {} slots", splits.test.end, raw.slots())));
        }
        let norm = Normalizer::fit(&raw, splits.train.clone())?;
        let normalized = norm.transform(&raw);
        Ok(Self {
            train: make_windows(splits.train.clone(), window)?,
            val: make_windows(splits.val.clone(), window)?,
            test: make_windows(splits.test.clone(), window)?,
            raw,
            normalized,
            norm,
            window,
            splits,
        })
    }

    pub fn nodes(&self) -> usize {
        self.raw.nodes()
    }

    /// Inputs `[B, N, M]` and targets `[B, N]`, both normalized.
    pub fn batch(&self, starts: &[usize]) -> (Tensor, Tensor) {
        let (n, m) = (self.nodes(), self.window);
        let z = &self.normalized;
        let x = Tensor::from_fn(&[starts.len(), n, m], |p| {
            let (b, node, t) = (p / (n * m), (p / m) % n, p % m);
            z.get(starts[b] + t, node)
        });
        let y = Tensor::from_fn(&[starts.len(), n], |p| z.get(starts[p / n] + m, p % n));
        (x, y)
    }

    pub fn floor(&self) -> Tensor {
        Tensor::new(vec![self.nodes()], self.norm.zero_floor()).expect("length")
    }

    pub fn train_means(&self) -> Vec<f64> {
        self.raw.means(self.splits.train.clone())
    }
}
