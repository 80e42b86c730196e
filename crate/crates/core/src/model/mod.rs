//! The forecasting network: embedding, gated temporal convolution,
//! multi-graph attention with residual fusion, positional encoding,
//! temporal self-attention and a two-layer readout.

mod config;
pub mod layers;
mod params;

pub use config::{ModelConfig, ModelOptions, PeMode, DEFAULT_C1};
pub use params::{ModelParams, ParamIndex, RUNNING_MEAN, RUNNING_VAR};

use std::path::Path;

use crate::diffcore::archive::{self, ArchiveError};
use crate::diffcore::{BatchStats, Mask, Tape, Tensor, TensorError, Var};
use crate::graphgen::Adjacency;
use layers::{Norm, ReadoutVars};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("model config: {0}")]
    Config(String),
    #[error("shape: {0}")]
    Shape(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("cannot access {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batchnorm uses batch statistics.
    Train,
    /// Batchnorm uses the running statistics.
    Eval,
}

/// Attention neighborhoods, one `[N, N]` mask per graph, self included.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphMasks(Vec<Mask>);

impl GraphMasks {
    pub fn from_adjacency(graphs: &[&Adjacency]) -> Result<Self, ModelError> {
        let n = graphs.first().map(|a| a.n()).unwrap_or(0);
        let masks = graphs
            .iter()
            .map(|a| {
                if a.n() != n {
                    return Err(ModelError::Shape(format!("graphs over {} and {} nodes", n, a.n())));
                }
                let keep = (0..n * n).map(|p| p / n == p % n || a.get(p / n, p % n)).collect();
                Ok(Mask::new(vec![n, n], keep)?)
            })
            .collect::<Result<_, _>>()?;
        Ok(Self(masks))
    }

    pub fn masks(&self) -> &[Mask] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn nodes(&self) -> usize {
        self.0.first().map(|m| m.shape()[0]).unwrap_or(0)
    }
}

/// Result of [`Model::forward`].
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `[B, N]` normalized predictions.
    pub pred: Var,
    /// Readout batch statistics in [`Mode::Train`].
    pub batch_stats: Option<BatchStats>,
    /// `[B, M, N, N]` per graph, layer and head, in that nesting order.
    pub gat_attention: Vec<Var>,
    /// `[B, N, M, M]` per self-attention head.
    pub mhsa_attention: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let params = ModelParams::init(&config, seed)?;
        Ok(Self { config, params })
    }

    /// Places every parameter on the tape, in [`ModelParams::names`] order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.tensors.iter().map(|t| tape.param(t.clone())).collect()
    }

    /// Runs the network on `x` (`[B, N, M]`). `vars` come from [`Model::bind`]
    /// or any tape variables with the same shapes. `floor` (`[N]`) replaces
    /// the final ReLU by `max(., floor)`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x: Var,
        graphs: &GraphMasks,
        floor: Option<Var>,
        mode: Mode,
    ) -> Result<ForwardOutput, ModelError> {
        let cfg = &self.config;
        let idx = &self.params.index;
        if vars.len() != self.params.len() {
            return Err(ModelError::Shape(format!("{} vars for {} parameters", vars.len(), self.params.len())));
        }
        let xs = tape.shape(x).to_vec();
        if xs.len() != 3 || xs[1] != cfg.nodes || xs[2] != cfg.window {
            return Err(ModelError::Shape(format!(
                "input {xs:?} does not match [B, {}, {}]",
                cfg.nodes, cfg.window
            )));
        }
        if graphs.len() != cfg.graphs || graphs.nodes() != cfg.nodes {
            return Err(ModelError::Shape(format!(
                "{} graphs over {} nodes for a model with {} graphs over {} nodes",
                graphs.len(),
                graphs.nodes(),
                cfg.graphs,
                cfg.nodes
            )));
        }

        let x1 = layers::embed(tape, x, vars[idx.embed_w0])?;
        let x2 = match idx.conv {
            Some((g1, g2)) => layers::gated_conv(tape, x1, vars[g1], vars[g2])?,
            None => x1,
        };
        let gat_vars: Vec<Vec<Vec<(Var, Var)>>> = idx
            .gat
            .iter()
            .map(|layers| {
                layers
                    .iter()
                    .map(|heads| heads.iter().map(|&(o, p)| (vars[o], vars[p])).collect())
                    .collect()
            })
            .collect();
        let mut gat_attention = Vec::new();
        let x3 = layers::spatial_view(tape, x2, &gat_vars, graphs.masks(), cfg.leaky_slope, &mut gat_attention)?;
        let x4 = tape.add(x1, x3)?;

        let mut mhsa_attention = Vec::new();
        let x5 = match &idx.mhsa {
            Some((heads, wo)) => {
                let pe = tape.constant(layers::positional_encoding(cfg.window, cfg.graphs * cfg.c3, cfg.pe));
                let x4 = tape.add(x4, pe)?;
                let heads: Vec<(Var, Var, Var)> = heads.iter().map(|&(q, k, v)| (vars[q], vars[k], vars[v])).collect();
                layers::mhsa(tape, x4, &heads, vars[*wo], &mut mhsa_attention)?
            }
            None => x4,
        };

        let rv = ReadoutVars {
            w1: vars[idx.w1],
            gamma: vars[idx.bn_gamma],
            beta: vars[idx.bn_beta],
            w2: vars[idx.w2],
            b2: vars[idx.b2],
        };
        let norm = match mode {
            Mode::Train => Norm::Batch { eps: cfg.bn_eps },
            Mode::Eval => Norm::Running {
                mean: &self.params.running_mean,
                var: &self.params.running_var,
                eps: cfg.bn_eps,
            },
        };
        let (pred, batch_stats) = layers::readout(tape, x5, rv, norm, floor)?;
        Ok(ForwardOutput {
            pred,
            batch_stats,
            gat_attention,
            mhsa_attention,
        })
    }

    /// Eval-mode predictions `[B, N]` for `x` (`[B, N, M]`).
    pub fn predict(&self, x: &Tensor, graphs: &GraphMasks, floor: Option<&Tensor>) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params.tensors.iter().map(|t| tape.constant(t.clone())).collect();
        let xv = tape.constant(x.clone());
        let fv = floor.map(|f| tape.constant(f.clone()));
        let out = self.forward(&mut tape, &vars, xv, graphs, fv, Mode::Eval)?;
        Ok(tape.value(out.pred).clone())
    }

    /// Writes `<dir>/model.json` and `<dir>/model.vgnt` (plus its manifest).
    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| ModelError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let cfg_path = dir.join("model.json");
        let mut text = serde_json::to_string_pretty(&self.config)?;
        text.push('\n');
        std::fs::write(&cfg_path, text).map_err(io(&cfg_path))?;
        archive::save(&dir.join("model.vgnt"), &self.params.to_named())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, ModelError> {
        let cfg_path = dir.join("model.json");
        let text = std::fs::read_to_string(&cfg_path).map_err(|source| ModelError::Io { path: cfg_path, source })?;
        let config: ModelConfig = serde_json::from_str(&text)?;
        let params = ModelParams::from_named(&config, archive::load(&dir.join("model.vgnt"))?)?;
        Ok(Self { config, params })
    }
}
