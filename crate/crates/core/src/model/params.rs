use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ModelError};
use crate::diffcore::Tensor;

/// Positions of every parameter in the flat list, by role.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamIndex {
    pub embed_w0: usize,
    /// `(gamma1, gamma2)` when the gated convolution is enabled.
    pub conv: Option<(usize, usize)>,
    /// `gat[graph][layer][head] = (omega, phi)`.
    pub gat: Vec<Vec<Vec<(usize, usize)>>>,
    /// Per head `(wq, wk, wv)` plus the output projection, when enabled.
    pub mhsa: Option<(Vec<(usize, usize, usize)>, usize)>,
    pub bn_gamma: usize,
    pub bn_beta: usize,
    pub w1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Glorot { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

struct Spec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

fn layout(cfg: &ModelConfig) -> (Vec<Spec>, ParamIndex) {
    let mut specs = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init: Init| {
        specs.push(Spec { name, shape, init });
        specs.len() - 1
    };
    let glorot = |fan_in, fan_out| Init::Glorot { fan_in, fan_out };

    let embed_w0 = push("embed.w0".into(), vec![1, cfg.c1], glorot(1, cfg.c1));
    let conv = cfg.short_term.then(|| {
        let shape = vec![cfg.kernel, cfg.c1, cfg.c2];
        let init = glorot(cfg.kernel * cfg.c1, cfg.kernel * cfg.c2);
        (
            push("conv.gamma1".into(), shape.clone(), init),
            push("conv.gamma2".into(), shape, init),
        )
    });
    let gat = (0..cfg.graphs)
        .map(|g| {
            (0..cfg.gat_layers)
                .map(|l| {
                    let cin = if l == 0 { cfg.c2 } else { cfg.c3 };
                    (0..cfg.heads)
                        .map(|h| {
                            let p = format!("gat.g{g}.l{l}.h{h}");
                            (
                                push(format!("{p}.omega"), vec![cin, cfg.c3], glorot(cin, cfg.c3)),
                                push(format!("{p}.phi"), vec![2 * cfg.c3, 1], glorot(2 * cfg.c3, 1)),
                            )
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let width = cfg.graphs * cfg.c3;
    let mhsa = cfg.long_term.then(|| {
        let heads = (0..cfg.heads)
            .map(|h| {
                let mk = |push: &mut dyn FnMut(String, Vec<usize>, Init) -> usize, w: &str| {
                    push(format!("mhsa.h{h}.{w}"), vec![width, cfg.d_k], glorot(width, cfg.d_k))
                };
                (mk(&mut push, "wq"), mk(&mut push, "wk"), mk(&mut push, "wv"))
            })
            .collect();
        let k = cfg.heads * cfg.d_k;
        (heads, push("mhsa.wo".into(), vec![k, cfg.d_m], glorot(k, cfg.d_m)))
    });
    let rin = cfg.readout_width();
    let w1 = push("readout.w1".into(), vec![rin, cfg.d_f1], glorot(rin, cfg.d_f1));
    let bn_gamma = push("readout.bn.gamma".into(), vec![cfg.d_f1], Init::Ones);
    let bn_beta = push("readout.bn.beta".into(), vec![cfg.d_f1], Init::Zeros);
    let w2 = push("readout.w2".into(), vec![cfg.d_f1, 1], glorot(cfg.d_f1, 1));
    let b2 = push("readout.b2".into(), vec![1], Init::Zeros);
    let index = ParamIndex {
        embed_w0,
        conv,
        gat,
        mhsa,
        bn_gamma,
        bn_beta,
        w1,
        w2,
        b2,
    };
    (specs, index)
}

/// Named trainable tensors plus the readout batchnorm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    pub tensors: Vec<Tensor>,
    pub index: ParamIndex,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

pub const RUNNING_MEAN: &str = "readout.bn.running_mean";
pub const RUNNING_VAR: &str = "readout.bn.running_var";

impl ModelParams {
    /// Glorot-uniform weights, unit batchnorm scale, zero shifts and biases.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let (specs, index) = layout(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = specs
            .iter()
            .map(|s| match s.init {
                Init::Glorot { fan_in, fan_out } => {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    Tensor::from_fn(&s.shape, |_| rng.random_range(-limit..limit))
                }
                Init::Zeros => Tensor::zeros(&s.shape),
                Init::Ones => Tensor::ones(&s.shape),
            })
            .collect();
        Ok(Self {
            names: specs.into_iter().map(|s| s.name).collect(),
            tensors,
            index,
            running_mean: vec![0.0; cfg.d_f1],
            running_var: vec![1.0; cfg.d_f1],
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|p| &self.tensors[p])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(|p| &mut self.tensors[p])
    }

    /// Total scalar count of trainable parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Scalar counts grouped by name prefix (`embed`, `conv`, `gat`, `mhsa`,
    /// `readout`), in first-appearance order.
    pub fn census(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for (name, t) in self.names.iter().zip(&self.tensors) {
            let group = name.split('.').next().unwrap_or(name).to_string();
            match out.iter_mut().find(|(g, _)| *g == group) {
                Some((_, c)) => *c += t.len(),
                None => out.push((group, t.len())),
            }
        }
        out
    }

    /// Folds batch statistics into the running estimates; the variance is
    /// stored unbiased.
    pub fn update_running(&mut self, mean: &[f64], var: &[f64], count: usize, momentum: f64) {
        let unbias = if count > 1 { count as f64 / (count - 1) as f64 } else { 1.0 };
        for (r, m) in self.running_mean.iter_mut().zip(mean) {
            *r = (1.0 - momentum) * *r + momentum * m;
        }
        for (r, v) in self.running_var.iter_mut().zip(var) {
            *r = (1.0 - momentum) * *r + momentum * v * unbias;
        }
    }

    /// Named tensors for archiving, running statistics last.
    pub fn to_named(&self) -> Vec<(String, Tensor)> {
        let c = self.running_mean.len();
        let mut out: Vec<(String, Tensor)> = self.names.iter().cloned().zip(self.tensors.iter().cloned()).collect();
        out.push((RUNNING_MEAN.into(), Tensor::new(vec![c], self.running_mean.clone()).expect("length")));
        out.push((RUNNING_VAR.into(), Tensor::new(vec![c], self.running_var.clone()).expect("length")));
        out
    }

    /// Rebuilds from archived tensors; every expected name must be present
    /// with the expected shape.
    pub fn from_named(cfg: &ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self, ModelError> {
        cfg.validate()?;
        let (specs, index) = layout(cfg);
        let mut map: std::collections::BTreeMap<String, Tensor> = named.into_iter().collect();
        let mut take = |name: &str, shape: &[usize]| -> Result<Tensor, ModelError> {
            let t = map
                .remove(name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor {name}")))?;
            if t.shape() != shape {
                return Err(ModelError::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            Ok(t)
        };
        let tensors = specs
            .iter()
            .map(|s| take(&s.name, &s.shape))
            .collect::<Result<Vec<_>, _>>()?;
        let running_mean = take(RUNNING_MEAN, &[cfg.d_f1])?.into_data();
        let running_var = take(RUNNING_VAR, &[cfg.d_f1])?.into_data();
        if let Some(extra) = map.keys().next() {
            return Err(ModelError::Checkpoint(format!("unexpected tensor {extra}")));
        }
        Ok(Self {
            names: specs.into_iter().map(|s| s.name).collect(),
            tensors,
            index,
            running_mean,
            running_var,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_finite() {
        let cfg = ModelConfig::new(12, 5, 2, 8);
        let a = ModelParams::init(&cfg, 1).unwrap();
        let b = ModelParams::init(&cfg, 1).unwrap();
        let c = ModelParams::init(&cfg, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.tensors, c.tensors);
        assert!(a.tensors.iter().all(Tensor::all_finite));
        assert_eq!(a.get("readout.bn.gamma").unwrap().data(), &[1.0; 16]);
    }

    #[test]
    fn census_matches_shapes() {
        // c1=8, g=2, c3=4, K=3, L=4, d_k=16, d_m=8, d_f1=16
        let cfg = ModelConfig::new(12, 5, 2, 8);
        let p = ModelParams::init(&cfg, 0).unwrap();
        let census: std::collections::BTreeMap<String, usize> = p.census().into_iter().collect();
        assert_eq!(census["embed"], 8);
        assert_eq!(census["conv"], 2 * 3 * 8 * 8);
        // per graph: layer0 4 heads * (8*4 + 8), layer1 4 heads * (4*4 + 8)
        assert_eq!(census["gat"], 2 * (4 * 40 + 4 * 24));
        assert_eq!(census["mhsa"], 4 * 3 * 8 * 16 + 64 * 8);
        assert_eq!(census["readout"], 8 * 16 + 16 + 16 + 16 + 1);
        assert_eq!(p.scalar_count(), census.values().sum::<usize>());
    }

    #[test]
    fn ablated_views_drop_their_params() {
        let mut cfg = ModelConfig::new(12, 5, 2, 8);
        cfg.short_term = false;
        cfg.long_term = false;
        let p = ModelParams::init(&cfg, 0).unwrap();
        assert!(p.names().iter().all(|n| !n.starts_with("conv") && !n.starts_with("mhsa")));
        assert!(p.index.conv.is_none() && p.index.mhsa.is_none());
    }

    #[test]
    fn named_roundtrip() {
        let cfg = ModelConfig::new(4, 3, 2, 4);
        let mut p = ModelParams::init(&cfg, 3).unwrap();
        p.update_running(&[1.0; 8], &[2.0; 8], 5, 0.1);
        let back = ModelParams::from_named(&cfg, p.to_named()).unwrap();
        assert_eq!(back, p);
        let mut named = p.to_named();
        named.pop();
        assert!(ModelParams::from_named(&cfg, named).is_err());
    }

    #[test]
    fn running_stats_use_unbiased_variance() {
        let cfg = ModelConfig::new(4, 3, 2, 4);
        let mut p = ModelParams::init(&cfg, 3).unwrap();
        p.update_running(&[2.0; 8], &[3.0; 8], 4, 0.1);
        assert!((p.running_mean[0] - 0.2).abs() < 1e-15);
        assert!((p.running_var[0] - (0.9 + 0.1 * 4.0)).abs() < 1e-15);
    }
}
