use serde::{Deserialize, Serialize};

use super::{EvalError, ForecastReport, Metrics};
use crate::graphgen::{construct, GraphKind, GraphParams, VirtualGraphSet};
use crate::ingest::{DemandTensor, OdTensor};
use crate::model::{GraphMasks, Model, ModelOptions};
use crate::par;
use crate::trainer::{self, SeriesMatrix, TrainConfig, TrainReport, WindowedDataset};

/// Graphs plus the windowed node-level dataset built from cell demand.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub graphs: VirtualGraphSet,
    pub node_demand: DemandTensor,
    pub data: WindowedDataset,
}

/// Splits the cell tensor, builds graphs from the training range only and
/// windows the node-aggregated series.
pub fn prepare(
    demand: &DemandTensor,
    od: Option<&OdTensor>,
    params: GraphParams,
    fractions: [f64; 3],
    window: usize,
) -> Result<Experiment, EvalError> {
    let splits = trainer::split(demand.slots(), fractions)?;
    let graphs = construct(demand, od, splits.train.clone(), params)?;
    Experiment::from_graphs(demand, graphs, fractions, window)
}

impl Experiment {
    /// Reuses an existing graph set, e.g. one loaded from disk.
    pub fn from_graphs(
        demand: &DemandTensor,
        graphs: VirtualGraphSet,
        fractions: [f64; 3],
        window: usize,
    ) -> Result<Self, EvalError> {
        let splits = trainer::split(demand.slots(), fractions)?;
        let node_demand = demand.aggregate(&graphs.groups())?;
        let data = WindowedDataset::new(SeriesMatrix::from_demand(&node_demand), splits, window)?;
        Ok(Self {
            graphs,
            node_demand,
            data,
        })
    }
}

/// Every node's training-split mean.
pub fn baseline_historic_mean(data: &WindowedDataset) -> Result<ForecastReport, EvalError> {
    let means = data.train_means();
    let pred = data.test.iter().flat_map(|_| means.iter().copied()).collect();
    ForecastReport::for_test_split("HistoricMean", data, pred)
}

/// The last observed slot of each window.
pub fn baseline_last_value(data: &WindowedDataset) -> Result<ForecastReport, EvalError> {
    let m = data.window;
    let pred = data
        .test
        .iter()
        .flat_map(|&k| data.raw.row(k + m - 1).iter().copied())
        .collect();
    ForecastReport::for_test_split("LastValue", data, pred)
}

/// Which graphs and temporal views a model variant keeps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub name: String,
    pub graphs: Vec<GraphKind>,
    pub short_term: bool,
    pub long_term: bool,
}

pub const FULL_MODEL: &str = "DMVST-GNN";

const SINGLE_AND_PAIRS: [(&str, &[GraphKind]); 6] = [
    ("D-GNN", &[GraphKind::Distance]),
    ("C-GNN", &[GraphKind::Correlation]),
    ("M-GNN", &[GraphKind::Mobility]),
    ("D+C-GNN", &[GraphKind::Distance, GraphKind::Correlation]),
    ("C+M-GNN", &[GraphKind::Correlation, GraphKind::Mobility]),
    ("D+M-GNN", &[GraphKind::Distance, GraphKind::Mobility]),
];

impl VariantSpec {
    fn all_graphs(with_mobility: bool) -> Vec<GraphKind> {
        GraphKind::ALL
            .into_iter()
            .filter(|&k| with_mobility || k != GraphKind::Mobility)
            .collect()
    }

    /// Full model over every available graph.
    pub fn full(with_mobility: bool) -> Self {
        Self {
            name: FULL_MODEL.into(),
            graphs: Self::all_graphs(with_mobility),
            short_term: true,
            long_term: true,
        }
    }

    /// Looks up a variant by name; `SD-GNN`, `LD-GNN` and the full model use
    /// every available graph.
    pub fn named(name: &str, with_mobility: bool) -> Result<Self, EvalError> {
        if let Some((n, g)) = SINGLE_AND_PAIRS.iter().find(|(n, _)| n.eq_ignore_ascii_case(name)) {
            return Ok(Self {
                name: n.to_string(),
                graphs: g.to_vec(),
                short_term: true,
                long_term: true,
            });
        }
        let full = Self::full(with_mobility);
        match name.to_ascii_uppercase().as_str() {
            "SD-GNN" => Ok(Self {
                name: "SD-GNN".into(),
                long_term: false,
                ..full
            }),
            "LD-GNN" => Ok(Self {
                name: "LD-GNN".into(),
                short_term: false,
                ..full
            }),
            "DMVST-GNN" | "FULL" => Ok(full),
            _ => Err(EvalError::Invalid(format!("unknown variant {name:?}"))),
        }
    }

    /// The eight ablation variants followed by the full model.
    pub fn standard(with_mobility: bool) -> Vec<Self> {
        SINGLE_AND_PAIRS
            .iter()
            .map(|(n, _)| *n)
            .chain(["SD-GNN", "LD-GNN", FULL_MODEL])
            .map(|n| Self::named(n, with_mobility).expect("known name"))
            .collect()
    }

    pub fn needs_mobility(&self) -> bool {
        self.graphs.contains(&GraphKind::Mobility)
    }
}

/// A trained variant with its test report.
#[derive(Debug, Clone)]
pub struct VariantRun {
    pub model: Model,
    pub train: TrainReport,
    pub report: ForecastReport,
}

pub fn masks_for(graphs: &VirtualGraphSet, kinds: &[GraphKind]) -> Result<GraphMasks, EvalError> {
    let adj = kinds
        .iter()
        .map(|&k| graphs.graph(k).ok_or_else(|| EvalError::Unavailable(vec![k.name().to_string()])))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GraphMasks::from_adjacency(&adj)?)
}

/// Trains and evaluates one variant. Model weights are seeded from
/// `train.seed`.
pub fn run_variant(exp: &Experiment, variant: &VariantSpec, options: &ModelOptions, train: &TrainConfig) -> Result<VariantRun, EvalError> {
    let masks = masks_for(&exp.graphs, &variant.graphs)?;
    let mut cfg = options.resolve(exp.data.window, exp.data.nodes(), variant.graphs.len())?;
    cfg.short_term = variant.short_term;
    cfg.long_term = variant.long_term;
    cfg.validate()?;
    let mut model = Model::new(cfg, train.seed)?;
    let report = trainer::train(&mut model, &exp.data, &masks, train)?;
    let forecast = forecast(exp, &model, variant, train.batch)?;
    Ok(VariantRun {
        model,
        train: report,
        report: forecast,
    })
}

/// Test-split forecast of a trained model in raw demand units.
pub fn forecast(exp: &Experiment, model: &Model, variant: &VariantSpec, batch: usize) -> Result<ForecastReport, EvalError> {
    let masks = masks_for(&exp.graphs, &variant.graphs)?;
    let z = trainer::predict_normalized(model, &exp.data, &masks, &exp.data.test, batch)?;
    let n = exp.data.nodes();
    let raw = z
        .iter()
        .enumerate()
        .map(|(p, &v)| exp.data.norm.inverse_value(p % n, v))
        .collect();
    ForecastReport::for_test_split(&variant.name, &exp.data, raw)
}

/// Row of an ablation table; `metrics` is `None` for unavailable variants.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    pub metrics: Option<Metrics>,
    pub epochs: usize,
}

/// Trains every variant for every seed, independent runs in parallel.
///
/// Variants needing mobility are reported unavailable when the graph set has
/// none, unless `strict`, in which case that is an error naming them.
pub fn run_ablation(
    exp: &Experiment,
    variants: &[VariantSpec],
    options: &ModelOptions,
    train: &TrainConfig,
    seeds: &[u64],
    strict: bool,
) -> Result<Vec<AblationRow>, EvalError> {
    let has_mobility = exp.graphs.mobility.is_some();
    let missing: Vec<String> = variants
        .iter()
        .filter(|v| v.needs_mobility() && !has_mobility)
        .map(|v| v.name.clone())
        .collect();
    if strict && !missing.is_empty() {
        return Err(EvalError::Unavailable(missing));
    }
    let jobs: Vec<(&VariantSpec, u64)> = variants.iter().flat_map(|v| seeds.iter().map(move |&s| (v, s))).collect();
    let results = par::map(&jobs, |&(v, seed)| -> Result<AblationRow, EvalError> {
        if v.needs_mobility() && !has_mobility {
            return Ok(AblationRow {
                variant: v.name.clone(),
                seed,
                metrics: None,
                epochs: 0,
            });
        }
        let cfg = TrainConfig { seed, ..train.clone() };
        let run = run_variant(exp, v, options, &cfg)?;
        log::info!("{} seed {seed}: rmse {:.4}", v.name, run.report.metrics.rmse);
        Ok(AblationRow {
            variant: v.name.clone(),
            seed,
            metrics: Some(run.report.metrics),
            epochs: run.train.history.len(),
        })
    });
    results.into_iter().collect()
}

/// Mean comparison of two samples of a lower-is-better metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub full_mean: f64,
    pub other_mean: f64,
    /// Two standard errors of the difference of means.
    pub margin: f64,
    pub full_not_worse: bool,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `full` is not worse when its mean exceeds `other`'s by at most two
/// standard errors of the difference.
pub fn compare_within_noise(full: &[f64], other: &[f64]) -> Comparison {
    let (fm, fs) = mean_sd(full);
    let (om, os) = mean_sd(other);
    let margin = 2.0 * (fs * fs / full.len() as f64 + os * os / other.len() as f64).sqrt();
    Comparison {
        full_mean: fm,
        other_mean: om,
        margin,
        full_not_worse: fm <= om + margin,
    }
}
