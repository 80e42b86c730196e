use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use vgnn_core::graphgen::GraphParams;
use vgnn_core::ingest::GridSpec;
use vgnn_core::model::ModelOptions;
use vgnn_core::trainer::{SynthSpec, TrainConfig};

/// Shared configuration for every subcommand. Command-line flags override the
/// values read from file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub grid: GridSpec,
    pub bin_width: i64,
    pub delta: f64,
    pub epsilon: f64,
    pub top_frac: f64,
    /// Train, validation and test shares of the slot axis.
    pub fractions: [f64; 3],
    pub model: ModelOptions,
    pub train: TrainConfig,
    /// Ablation variants by name; empty means the full standard list.
    pub variants: Vec<String>,
    /// Ablation seeds.
    pub seeds: Vec<u64>,
    pub synth: SynthSpec,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub input: Option<String>,
    pub schema: Option<PathBuf>,
    pub demand: Option<PathBuf>,
    pub od: Option<PathBuf>,
    pub graphs: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let g = GraphParams::default();
        Self {
            paths: Paths::default(),
            grid: GridSpec::nyc(),
            bin_width: 3600,
            delta: g.delta,
            epsilon: g.epsilon,
            top_frac: g.top_frac,
            fractions: [0.8, 0.1, 0.1],
            model: ModelOptions::default(),
            train: TrainConfig::default(),
            variants: Vec::new(),
            seeds: vec![1, 2, 3],
            synth: SynthSpec::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.train.validate()?;
        if self.bin_width <= 0 {
            bail!("bin_width must be positive");
        }
        let sum: f64 = self.fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.fractions.iter().any(|f| *f <= 0.0) {
            bail!("fractions must be positive and sum to 1, got {:?}", self.fractions);
        }
        Ok(())
    }

    pub fn graph_params(&self) -> GraphParams {
        GraphParams {
            delta: self.delta,
            epsilon: self.epsilon,
            top_frac: self.top_frac,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}
