use serde::{Deserialize, Serialize};

use super::ModelError;

/// Positional-encoding table variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeMode {
    /// `sin/cos(m / 10000^(2i/W))` with channel pair index `i`.
    #[default]
    Standard,
    /// `sin/cos(m / 10000^(2m/W))` chosen by the parity of position `m`,
    /// identical across channels.
    Literal,
}

/// Fully resolved network dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Input window length `M`.
    pub window: usize,
    /// Virtual node count `N`.
    pub nodes: usize,
    /// Graph count `g`.
    pub graphs: usize,
    pub c1: usize,
    pub c2: usize,
    pub c3: usize,
    pub kernel: usize,
    pub heads: usize,
    pub d_k: usize,
    pub d_m: usize,
    pub d_f1: usize,
    pub gat_layers: usize,
    pub leaky_slope: f64,
    pub pe: PeMode,
    /// Gated convolution enabled; identity when off.
    pub short_term: bool,
    /// Positional encoding and self-attention enabled; identity when off.
    pub long_term: bool,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl ModelConfig {
    /// Derived defaults: `C2 = C1`, `C3 = C1 / g`, `d_k = 16`, `d_m = C1`,
    /// `d_f1 = 2 C1`, `K = 3`, `L = 4`.
    pub fn new(window: usize, nodes: usize, graphs: usize, c1: usize) -> Self {
        Self {
            window,
            nodes,
            graphs,
            c1,
            c2: c1,
            c3: if graphs == 0 { 0 } else { c1 / graphs },
            kernel: 3,
            heads: 4,
            d_k: 16,
            d_m: c1,
            d_f1: 2 * c1,
            gat_layers: 2,
            leaky_slope: 0.2,
            pe: PeMode::Standard,
            short_term: true,
            long_term: true,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::Config(m));
        let positive = [
            ("window", self.window),
            ("nodes", self.nodes),
            ("graphs", self.graphs),
            ("c1", self.c1),
            ("c2", self.c2),
            ("c3", self.c3),
            ("heads", self.heads),
            ("d_k", self.d_k),
            ("d_m", self.d_m),
            ("d_f1", self.d_f1),
            ("gat_layers", self.gat_layers),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return err(format!("{name} must be positive"));
        }
        if self.c1 != self.graphs * self.c3 {
            return err(format!("c1 ({}) must equal graphs * c3 ({} * {})", self.c1, self.graphs, self.c3));
        }
        if self.kernel.is_multiple_of(2) {
            return err(format!("kernel size {} must be odd", self.kernel));
        }
        if !self.short_term && self.c2 != self.c1 {
            return err(format!("without the gated convolution c2 ({}) must equal c1 ({})", self.c2, self.c1));
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return err(format!("leaky slope {} outside [0, 1)", self.leaky_slope));
        }
        if !(self.bn_eps > 0.0) || !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return err("batchnorm eps must be > 0 and momentum in (0, 1]".into());
        }
        Ok(())
    }

    /// Width fed to the readout: `d_m` with self-attention, else `C1`.
    pub fn readout_width(&self) -> usize {
        if self.long_term {
            self.d_m
        } else {
            self.c1
        }
    }
}

/// Partially specified dimensions; unset fields take the derived defaults
/// of [`ModelConfig::new`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelOptions {
    pub c1: Option<usize>,
    pub c2: Option<usize>,
    pub c3: Option<usize>,
    pub kernel: Option<usize>,
    pub heads: Option<usize>,
    pub d_k: Option<usize>,
    pub d_m: Option<usize>,
    pub d_f1: Option<usize>,
    pub gat_layers: Option<usize>,
    pub leaky_slope: Option<f64>,
    pub pe: Option<PeMode>,
}

pub const DEFAULT_C1: usize = 12;

impl ModelOptions {
    pub fn resolve(&self, window: usize, nodes: usize, graphs: usize) -> Result<ModelConfig, ModelError> {
        let c1 = self.c1.unwrap_or(DEFAULT_C1);
        let mut cfg = ModelConfig::new(window, nodes, graphs, c1);
        if let Some(v) = self.c2 {
            cfg.c2 = v;
        }
        if let Some(v) = self.c3 {
            cfg.c3 = v;
        }
        if let Some(v) = self.kernel {
            cfg.kernel = v;
        }
        if let Some(v) = self.heads {
            cfg.heads = v;
        }
        if let Some(v) = self.d_k {
            cfg.d_k = v;
        }
        if let Some(v) = self.d_m {
            cfg.d_m = v;
        }
        if let Some(v) = self.d_f1 {
            cfg.d_f1 = v;
        }
        if let Some(v) = self.gat_layers {
            cfg.gat_layers = v;
        }
        if let Some(v) = self.leaky_slope {
            cfg.leaky_slope = v;
        }
        if let Some(v) = self.pe {
            cfg.pe = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
