//! Fast correctness suites: gradient checks, oracle comparisons and
//! structural invariants. Each returns a [`CheckOutcome`] instead of
//! panicking so callers can print a report.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{grad_check_many, Tape, Tensor, TensorError};
use crate::graphgen::{aggregate_regions, build_adjacency, pearson, top_k, Adjacency, RegionStats};
use crate::ingest::GridSpec;
use crate::model::{GraphMasks, Model, ModelConfig, Mode};
use crate::oracle::{aggregate_reference, pearson_two_pass};
use crate::trainer::smooth_l1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {}: {}", self.name, self.detail)
    }
}

pub const GRAD_TOL: f64 = 1e-4;
pub const GRAD_STEP: f64 = 1e-5;
pub const PEARSON_TOL: f64 = 1e-10;
pub const ATTENTION_TOL: f64 = 1e-12;
pub const SMOOTH_L1_TOL: f64 = 1e-8;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

/// Connected random graph: a ring plus extra random edges.
fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> Adjacency {
    let mut edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).filter(|(a, b)| a != b).collect();
    for _ in 0..n {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b {
            edges.push((a, b));
        }
    }
    Adjacency::from_edges(n, &edges).expect("valid edges")
}

/// Largest target offset from the eval-mode prediction in [`gradient_integrity`].
pub const GRAD_RESIDUAL: f64 = 0.1;

/// Whole-model gradient of a Smooth-L1 loss against central differences at a
/// small two-graph configuration with eval-mode batch norm. Targets sit
/// within [`GRAD_RESIDUAL`] of the prediction and the output floor is the
/// normalized-zero level used in training.
pub fn gradient_integrity(seed: u64) -> CheckOutcome {
    const NAME: &str = "gradient integrity";
    let run = || -> Result<_, TensorError> {
        let mut cfg = ModelConfig::new(4, 6, 2, 6);
        cfg.heads = 2;
        let model = Model::new(cfg, seed).map_err(invalid)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
        let x = random_tensor(&mut rng, &[2, 6, 4]);
        let a = random_graph(&mut rng, 6);
        let b = random_graph(&mut rng, 6);
        let masks = GraphMasks::from_adjacency(&[&a, &b]).map_err(invalid)?;
        let floor = Tensor::new(vec![6], (0..6).map(|_| rng.random_range(-3.0..-1.0)).collect())?;
        let pred = model.predict(&x, &masks, Some(&floor)).map_err(invalid)?;
        let target = Tensor::new(
            vec![2, 6],
            pred.data()
                .iter()
                .map(|p| p + rng.random_range(-GRAD_RESIDUAL..GRAD_RESIDUAL))
                .collect(),
        )?;
        grad_check_many(
            |tape, vars| {
                let xv = tape.constant(x.clone());
                let fv = tape.constant(floor.clone());
                let out = model.forward(tape, vars, xv, &masks, Some(fv), Mode::Eval).map_err(invalid)?;
                let tv = tape.constant(target.clone());
                let d = tape.sub(out.pred, tv)?;
                let l = tape.smooth_l1(d);
                Ok(tape.mean(l))
            },
            &model.params.tensors,
            GRAD_STEP,
        )
    };
    match run() {
        Ok(r) => CheckOutcome::new(
            NAME,
            r.passes(GRAD_TOL),
            format!("max rel error {:.3e} over {} coordinates (tol {GRAD_TOL:e})", r.max_rel_error, r.checked),
        ),
        Err(e) => CheckOutcome::new(NAME, false, e.to_string()),
    }
}

fn invalid(e: impl std::fmt::Display) -> TensorError {
    TensorError::Invalid {
        op: "selfcheck",
        msg: e.to_string(),
    }
}

/// Random retained cells on a 4×4 grid with series drawn around a few shared
/// prototypes.
pub fn random_regions(rng: &mut ChaCha8Rng, max_cells: usize) -> (GridSpec, Vec<RegionStats>) {
    let grid = GridSpec::new(40.0, 40.04, -74.0, -73.96, 4, 4).expect("grid");
    let count = rng.random_range(1..=max_cells.min(grid.cells()));
    let mut cells: Vec<usize> = (0..grid.cells()).collect();
    for i in (1..cells.len()).rev() {
        cells.swap(i, rng.random_range(0..=i));
    }
    cells.truncate(count);
    let len = 10;
    let protos: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..len).map(|_| rng.random_range(0.0..10.0)).collect())
        .collect();
    let stats = cells
        .into_iter()
        .map(|cell_id| {
            let p = &protos[rng.random_range(0..protos.len())];
            let noise = rng.random_range(0.0..6.0);
            let series: Vec<f64> = p
                .iter()
                .map(|v| (v + noise * rng.random_range(-1.0..1.0)).round().max(0.0))
                .collect();
            RegionStats {
                cell_id,
                mean_demand: series.iter().sum::<f64>() / len as f64,
                series,
            }
        })
        .collect();
    (grid, stats)
}

/// Aggregation output equals the naive reference executor on random
/// instances, each tried at several similarity thresholds.
pub fn aggregation_oracle(instances: usize, seed: u64) -> CheckOutcome {
    const NAME: &str = "aggregation oracle";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let epsilons = [-0.5, 0.0, 0.3, 0.5, 0.8, 1.0];
    for i in 0..instances {
        let (grid, mut stats) = random_regions(&mut rng, 12);
        stats.sort_by_key(|s| s.cell_id);
        let cells: Vec<(usize, usize)> = stats.iter().map(|s| grid.row_col(s.cell_id)).collect();
        let series: Vec<Vec<f64>> = stats.iter().map(|s| s.series.clone()).collect();
        for eps in epsilons {
            let got: Vec<Vec<usize>> = match aggregate_regions(&stats, eps, &grid) {
                Ok(nodes) => nodes.into_iter().map(|n| n.members).collect(),
                Err(e) => return CheckOutcome::new(NAME, false, format!("instance {i}: {e}")),
            };
            let expected: Vec<Vec<usize>> = aggregate_reference(&cells, &series, eps)
                .into_iter()
                .map(|g| g.into_iter().map(|p| stats[p].cell_id).collect())
                .collect();
            if got != expected {
                return CheckOutcome::new(NAME, false, format!("instance {i}, epsilon {eps}: {got:?} != {expected:?}"));
            }
        }
    }
    CheckOutcome::new(
        NAME,
        true,
        format!("{instances} instances x {} thresholds identical", epsilons.len()),
    )
}

pub fn pearson_oracle(pairs: usize, seed: u64) -> CheckOutcome {
    const NAME: &str = "pearson oracle";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let n = rng.random_range(2..64);
        let scale = 10f64.powi(rng.random_range(-2..4));
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
        match pearson(&a, &b) {
            Ok(c) => worst = worst.max((c.r - pearson_two_pass(&a, &b)).abs()),
            Err(e) => return CheckOutcome::new(NAME, false, e.to_string()),
        }
    }
    CheckOutcome::new(
        NAME,
        worst < PEARSON_TOL,
        format!("{pairs} pairs, max abs diff {worst:.3e} (tol {PEARSON_TOL:e})"),
    )
}

/// Symmetry, empty diagonal and minimum row degree of top-k adjacencies built
/// from random symmetric score matrices with many ties.
pub fn adjacency_invariants(matrices: usize, seed: u64) -> CheckOutcome {
    const NAME: &str = "adjacency invariants";
    const FRAC: f64 = 0.1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for m in 0..matrices {
        let n = rng.random_range(20..=60);
        let levels = rng.random_range(2..50);
        let mut scores = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..i {
                let v = rng.random_range(0..levels) as f64;
                scores[i * n + j] = v;
                scores[j * n + i] = v;
            }
        }
        let a = match build_adjacency(&scores, n, FRAC) {
            Ok(a) => a,
            Err(e) => return CheckOutcome::new(NAME, false, format!("matrix {m}: {e}")),
        };
        let k = top_k(n, FRAC);
        let min_degree = (0..n).map(|i| a.degree(i)).min().unwrap_or(0);
        if !a.is_symmetric() || !a.has_zero_diagonal() || min_degree < k {
            return CheckOutcome::new(NAME, false, format!("matrix {m} (N={n}): min degree {min_degree}, k {k}"));
        }
    }
    CheckOutcome::new(NAME, true, format!("{matrices} matrices with N in 20..=60"))
}

/// GAT and MHSA attention rows sum to one and GAT weights vanish outside the
/// closed neighbourhood, over random configurations and inputs.
pub fn attention_normalization(passes: usize, seed: u64) -> CheckOutcome {
    const NAME: &str = "attention normalization";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for p in 0..passes {
        let n = rng.random_range(3..10);
        let g = rng.random_range(1..=3);
        let m = rng.random_range(2..7);
        let heads = rng.random_range(1..=3);
        let mut cfg = ModelConfig::new(m, n, g, 2 * g);
        cfg.heads = heads;
        cfg.d_k = 3;
        let graphs: Vec<Adjacency> = (0..g).map(|_| random_graph(&mut rng, n)).collect();
        let refs: Vec<&Adjacency> = graphs.iter().collect();
        let x = random_tensor(&mut rng, &[2, n, m]);
        let result = (|| {
            let model = Model::new(cfg, rng.random())?;
            let masks = GraphMasks::from_adjacency(&refs)?;
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape);
            let xv = tape.constant(x);
            let mode = if p % 2 == 0 { Mode::Train } else { Mode::Eval };
            let out = model.forward(&mut tape, &vars, xv, &masks, None, mode)?;
            Ok::<_, crate::model::ModelError>((tape, out, masks))
        })();
        let (tape, out, masks) = match result {
            Ok(v) => v,
            Err(e) => return CheckOutcome::new(NAME, false, format!("pass {p}: {e}")),
        };
        let per_graph = out.gat_attention.len() / g;
        for (k, &a) in out.gat_attention.iter().enumerate() {
            let keep = masks.masks()[k / per_graph].keep();
            for (r, row) in tape.value(a).data().chunks(n).enumerate() {
                worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
                let i = r % n;
                if row.iter().enumerate().any(|(j, &v)| !keep[i * n + j] && v != 0.0) {
                    return CheckOutcome::new(NAME, false, format!("pass {p}: nonzero GAT weight outside neighbourhood"));
                }
            }
        }
        for &a in &out.mhsa_attention {
            for row in tape.value(a).data().chunks(m) {
                worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    CheckOutcome::new(
        NAME,
        worst < ATTENTION_TOL,
        format!("{passes} passes, max |row sum - 1| {worst:.3e} (tol {ATTENTION_TOL:e})"),
    )
}

pub fn smooth_l1_values() -> CheckOutcome {
    const NAME: &str = "smooth-l1 values";
    let at = |x: f64| smooth_l1(&[x], &[0.0]);
    let half = at(0.5);
    let three = at(3.0);
    let jump = (at(1.0) - at(1.0 - 1e-12)).abs().max((at(1.0 + 1e-12) - at(1.0)).abs());
    let passed = (half - 0.125).abs() < SMOOTH_L1_TOL && (three - 2.5).abs() < SMOOTH_L1_TOL && jump < SMOOTH_L1_TOL;
    CheckOutcome::new(NAME, passed, format!("f(0.5)={half}, f(3)={three}, jump at 1 {jump:.1e}"))
}

/// Every fast suite at its acceptance size.
pub fn run_all(seed: u64) -> Vec<CheckOutcome> {
    vec![
        gradient_integrity(seed),
        aggregation_oracle(200, seed),
        pearson_oracle(1000, seed),
        adjacency_invariants(100, seed),
        attention_normalization(50, seed),
        smooth_l1_values(),
    ]
}
