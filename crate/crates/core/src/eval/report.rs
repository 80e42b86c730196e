use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{hot_nodes, mae, mape_topk, rmse, EvalError};
use crate::trainer::WindowedDataset;

/// Test-split forecasts in raw demand units with their metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastReport {
    pub variant: String,
    pub nodes: usize,
    /// Target slot of each sample.
    pub slots: Vec<usize>,
    /// Row-major `[samples, nodes]`.
    pub pred: Vec<f64>,
    pub target: Vec<f64>,
    pub hot: Vec<usize>,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub mae: f64,
    pub mape_topk: f64,
}

pub const HOT_FRACTION: f64 = 0.1;

impl ForecastReport {
    pub fn new(variant: &str, nodes: usize, slots: Vec<usize>, pred: Vec<f64>, target: Vec<f64>, hot: Vec<usize>) -> Result<Self, EvalError> {
        if slots.len() * nodes != pred.len() {
            return Err(EvalError::LengthMismatch(slots.len() * nodes, pred.len()));
        }
        let metrics = Metrics {
            rmse: rmse(&pred, &target)?,
            mae: mae(&pred, &target)?,
            mape_topk: mape_topk(&pred, &target, nodes, &hot)?,
        };
        Ok(Self {
            variant: variant.to_string(),
            nodes,
            slots,
            pred,
            target,
            hot,
            metrics,
        })
    }

    /// Report for raw-unit `pred` over the dataset's test windows.
    pub fn for_test_split(variant: &str, data: &WindowedDataset, pred: Vec<f64>) -> Result<Self, EvalError> {
        let m = data.window;
        let slots: Vec<usize> = data.test.iter().map(|k| k + m).collect();
        let target: Vec<f64> = slots.iter().flat_map(|&s| data.raw.row(s).iter().copied()).collect();
        let hot = hot_nodes(&data.train_means(), HOT_FRACTION);
        Self::new(variant, data.nodes(), slots, pred, target, hot)
    }

    /// `slot,node,target,pred` rows.
    pub fn write_predictions(&self, path: &Path) -> Result<(), EvalError> {
        let io = |source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(f, "slot,node,target,pred").map_err(io)?;
        for (s, slot) in self.slots.iter().enumerate() {
            for node in 0..self.nodes {
                let p = s * self.nodes + node;
                writeln!(f, "{slot},{node},{:?},{:?}", self.target[p], self.pred[p]).map_err(io)?;
            }
        }
        f.flush().map_err(io)
    }

    /// Rebuilds a report from a prediction dump; metrics are recomputed.
    pub fn read_predictions(path: &Path, variant: &str, hot: Vec<usize>) -> Result<Self, EvalError> {
        #[derive(Deserialize)]
        struct Row {
            slot: usize,
            node: usize,
            target: f64,
            pred: f64,
        }
        let mut reader = csv::Reader::from_path(path)?;
        let rows: Vec<Row> = reader.deserialize().collect::<Result<_, _>>()?;
        let nodes = rows.iter().map(|r| r.node + 1).max().ok_or(EvalError::Empty)?;
        if !rows.len().is_multiple_of(nodes) {
            return Err(EvalError::Invalid(format!("{} rows do not tile {nodes} nodes", rows.len())));
        }
        let mut slots = Vec::new();
        for (i, chunk) in rows.chunks(nodes).enumerate() {
            if chunk.iter().enumerate().any(|(n, r)| r.node != n || r.slot != chunk[0].slot) {
                return Err(EvalError::Invalid(format!("sample {i} is not a complete node row")));
            }
            slots.push(chunk[0].slot);
        }
        let pred = rows.iter().map(|r| r.pred).collect();
        let target = rows.iter().map(|r| r.target).collect();
        Self::new(variant, nodes, slots, pred, target, hot)
    }
}

/// Delimiter-separated metrics table, one row per report.
pub fn metrics_table(rows: &[(&str, Option<&Metrics>)]) -> String {
    let mut out = String::from("variant,rmse,mae,mape_top10\n");
    for (name, m) in rows {
        match m {
            Some(m) => out.push_str(&format!("{name},{:.6},{:.6},{:.6}\n", m.rmse, m.mae, m.mape_topk)),
            None => out.push_str(&format!("{name},unavailable,unavailable,unavailable\n")),
        }
    }
    out
}
