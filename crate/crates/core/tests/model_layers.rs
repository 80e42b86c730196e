use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vgnn_core::diffcore::{grad_check_many, Mask, Tape, Tensor, TensorError, Var};
use vgnn_core::graphgen::Adjacency;
use vgnn_core::model::layers::{self, Norm, ReadoutVars};
use vgnn_core::model::{GraphMasks, Model, ModelConfig, Mode};

const TOL: f64 = 1e-12;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() < tol, "{x} vs {y}");
    }
}

fn ring(n: usize) -> Adjacency {
    let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).filter(|(a, b)| a != b).collect();
    let edges: Vec<(usize, usize)> = edges.into_iter().map(|(a, b)| (a.min(b), a.max(b))).collect();
    let mut dedup = edges.clone();
    dedup.sort();
    dedup.dedup();
    Adjacency::from_edges(n, &dedup).unwrap()
}

fn star(n: usize) -> Adjacency {
    let edges: Vec<(usize, usize)> = (1..n).map(|j| (0, j)).collect();
    Adjacency::from_edges(n, &edges).unwrap()
}

#[test]
fn embed_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&mut rng, &[2, 3, 4]);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let zero = tape.constant(Tensor::zeros(&[1, 5]));
    let out = layers::embed(&mut tape, xv, zero).unwrap();
    assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    let one = tape.constant(Tensor::ones(&[1, 1]));
    let out = layers::embed(&mut tape, xv, one).unwrap();
    assert_eq!(tape.value(out).data(), x.data());
    let w = random(&mut rng, &[1, 5]);
    let wv = tape.constant(w.clone());
    let out = layers::embed(&mut tape, xv, wv).unwrap();
    assert_eq!(tape.shape(out), &[2, 3, 4, 5]);
    let expected: Vec<f64> = x.data().iter().flat_map(|&a| w.data().iter().map(move |&b| a * b)).collect();
    assert_eq!(tape.value(out).data(), &expected[..]);
}

#[test]
fn gated_conv_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (m, c1, c2, k) = (4, 2, 3, 3);
    let x = random(&mut rng, &[1, 1, m, c1]);
    let g1 = random(&mut rng, &[k, c1, c2]);
    let g2 = random(&mut rng, &[k, c1, c2]);
    let conv = |w: &Tensor| -> Vec<f64> {
        let mut out = vec![0.0; m * c2];
        for t in 0..m {
            for o in 0..c2 {
                let mut s = 0.0;
                for dk in 0..k {
                    let src = t as isize + dk as isize - 1;
                    if src < 0 || src >= m as isize {
                        continue;
                    }
                    for i in 0..c1 {
                        s += x.get(&[0, 0, src as usize, i]) * w.get(&[dk, i, o]);
                    }
                }
                out[t * c2 + o] = s;
            }
        }
        out
    };
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let (a, b) = (tape.constant(g1.clone()), tape.constant(g2.clone()));
    let out = layers::gated_conv(&mut tape, xv, a, b).unwrap();
    let expected: Vec<f64> = conv(&g1).iter().zip(conv(&g2)).map(|(p, q)| p * sig(q)).collect();
    close(tape.value(out).data(), &expected, TOL);

    let z = tape.constant(Tensor::zeros(&[k, c1, c2]));
    let out = layers::gated_conv(&mut tape, xv, a, z).unwrap();
    let half: Vec<f64> = conv(&g1).iter().map(|p| 0.5 * p).collect();
    close(tape.value(out).data(), &half, TOL);
    let out = layers::gated_conv(&mut tape, xv, z, b).unwrap();
    assert!(tape.value(out).data().iter().all(|&v| v == 0.0));

    let even = tape.constant(Tensor::zeros(&[2, c1, c2]));
    assert!(layers::gated_conv(&mut tape, xv, even, even).is_err());
}

#[test]
fn gat_self_only_and_symmetric_neighbors() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // isolated node 2, nodes 0-1 joined
    let adj = Adjacency::from_edges(3, &[(0, 1)]).unwrap();
    let masks = GraphMasks::from_adjacency(&[&adj]).unwrap();
    let mut h = random(&mut rng, &[1, 1, 3, 2]);
    // nodes 0 and 1 identical
    for c in 0..2 {
        let v = h.get(&[0, 0, 0, c]);
        h.data_mut()[2 + c] = v;
    }
    let omegas: Vec<Tensor> = (0..2).map(|_| random(&mut rng, &[2, 2])).collect();
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let heads: Vec<(Var, Var)> = omegas
        .iter()
        .map(|o| {
            let phi = random(&mut rng, &[4, 1]);
            (tape.constant(o.clone()), tape.constant(phi))
        })
        .collect();
    let mut trace = Vec::new();
    let out = layers::gat_layer(&mut tape, hv, &heads, &masks.masks()[0], 0.2, &mut trace).unwrap();
    for att in &trace {
        let a = tape.value(*att);
        assert_eq!(a.get(&[0, 0, 2, 2]), 1.0);
        assert_eq!(a.get(&[0, 0, 2, 0]), 0.0);
        assert!((a.get(&[0, 0, 0, 0]) - 0.5).abs() < TOL);
        assert!((a.get(&[0, 0, 0, 1]) - 0.5).abs() < TOL);
    }
    // node 2: LeakyReLU(mean_heads(h_2 omega))
    let lrelu = |v: f64| if v > 0.0 { v } else { 0.2 * v };
    for c in 0..2 {
        let mean: f64 = omegas
            .iter()
            .map(|o| (0..2).map(|i| h.get(&[0, 0, 2, i]) * o.get(&[i, c])).sum::<f64>())
            .sum::<f64>()
            / 2.0;
        assert!((tape.value(out).get(&[0, 0, 2, c]) - lrelu(mean)).abs() < TOL);
    }
}

#[test]
fn gat_path_hand_values() {
    // path 0-1-2, h = (1, 2, 3), omega = 2, phi = (1, -1)
    let adj = Adjacency::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
    let masks = GraphMasks::from_adjacency(&[&adj]).unwrap();
    let mut tape = Tape::new();
    let h = tape.constant(Tensor::new(vec![1, 1, 3, 1], vec![1.0, 2.0, 3.0]).unwrap());
    let omega = tape.constant(Tensor::new(vec![1, 1], vec![2.0]).unwrap());
    let phi = tape.constant(Tensor::new(vec![2, 1], vec![1.0, -1.0]).unwrap());
    let mut trace = Vec::new();
    let out = layers::gat_layer(&mut tape, h, &[(omega, phi)], &masks.masks()[0], 0.2, &mut trace).unwrap();
    let a = tape.value(trace[0]).data().to_vec();
    #[rustfmt::skip]
    let expected = [
        0.598687660112452, 0.401312339887548, 0.0,
        0.8156252683068328, 0.11038287670124343, 0.07399185499192379,
        0.0, 0.8807970779778824, 0.11920292202211755,
    ];
    close(&a, &expected, TOL);
    close(
        tape.value(out).data(),
        &[2.802624679775096, 2.516733173370182, 4.238405844044235],
        TOL,
    );
}

fn spatial_fixture(seed: u64, zero: bool) -> (Model, Tensor, GraphMasks) {
    let mut cfg = ModelConfig::new(4, 5, 2, 6);
    cfg.heads = 2;
    cfg.d_k = 4;
    let mut model = Model::new(cfg, seed).unwrap();
    if zero {
        for (name, t) in model.params.names().to_vec().iter().zip(model.params.tensors.iter_mut()) {
            if name.starts_with("gat.") {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let x = random(&mut rng, &[2, 5, 4]);
    let masks = GraphMasks::from_adjacency(&[&ring(5), &star(5)]).unwrap();
    (model, x, masks)
}

fn gat_vars(model: &Model, vars: &[Var], graph: usize) -> Vec<Vec<(Var, Var)>> {
    model.params.index.gat[graph]
        .iter()
        .map(|heads| heads.iter().map(|&(o, p)| (vars[o], vars[p])).collect())
        .collect()
}

#[test]
fn spatial_view_residual_identity_and_blocks() {
    for zero in [true, false] {
        let (model, x, masks) = spatial_fixture(5, zero);
        let idx = &model.params.index;
        let mut tape = Tape::new();
        let vars: Vec<Var> = model.params.tensors.iter().map(|t| tape.constant(t.clone())).collect();
        let xv = tape.constant(x.clone());
        let x1 = layers::embed(&mut tape, xv, vars[idx.embed_w0]).unwrap();
        let (g1, g2) = idx.conv.unwrap();
        let x2 = layers::gated_conv(&mut tape, x1, vars[g1], vars[g2]).unwrap();
        let all: Vec<_> = (0..2).map(|g| gat_vars(&model, &vars, g)).collect();
        let mut trace = Vec::new();
        let x3 = layers::spatial_view(&mut tape, x2, &all, masks.masks(), 0.2, &mut trace).unwrap();
        let x4 = tape.add(x1, x3).unwrap();
        if zero {
            assert_eq!(tape.value(x4), tape.value(x1));
            continue;
        }
        for g in 0..2 {
            let single = layers::spatial_view(&mut tape, x2, &all[g..g + 1], &masks.masks()[g..g + 1], 0.2, &mut trace).unwrap();
            let full = tape.value(x3);
            let part = tape.value(single);
            for p in 0..part.len() {
                let (row, c) = (p / 3, p % 3);
                assert_eq!(part.data()[p], full.data()[row * 6 + g * 3 + c]);
            }
        }
    }
}

#[test]
fn mhsa_cases() {
    let mut tape = Tape::new();
    let t = |tape: &mut Tape, shape: &[usize], d: &[f64]| tape.constant(Tensor::new(shape.to_vec(), d.to_vec()).unwrap());
    let x = t(&mut tape, &[1, 1, 3, 2], &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    let wq = t(&mut tape, &[2, 2], &[1.0, 0.5, 0.0, 1.0]);
    let wk = t(&mut tape, &[2, 2], &[0.5, 0.0, 1.0, -1.0]);
    let wv = t(&mut tape, &[2, 2], &[1.0, 2.0, -1.0, 0.5]);
    let wo = t(&mut tape, &[2, 2], &[1.0, 0.0, 0.0, 2.0]);
    let mut trace = Vec::new();
    let out = layers::mhsa(&mut tape, x, &[(wq, wk, wv)], wo, &mut trace).unwrap();
    close(
        tape.value(out).data(),
        &[0.0, 3.539770384278907, 0.25523476522683075, 3.5034898434845543, 0.23092114686399873, 3.646047134961999],
        TOL,
    );

    // zero queries: uniform attention, output rows = mean of V rows
    let zq = t(&mut tape, &[2, 2], &[0.0; 4]);
    let eye = t(&mut tape, &[2, 2], &[1.0, 0.0, 0.0, 1.0]);
    let out = layers::mhsa(&mut tape, x, &[(zq, wk, wv)], eye, &mut trace).unwrap();
    // V = x wv = (1,2), (-1,0.5), (0,2.5); mean (0, 5/3)
    for r in 0..3 {
        close(&tape.value(out).data()[r * 2..r * 2 + 2], &[0.0, 5.0 / 3.0], TOL);
    }

    // M = 1: attention [1], output = V
    let x1 = t(&mut tape, &[1, 2, 1, 2], &[0.3, -0.7, 1.1, 0.4]);
    let out = layers::mhsa(&mut tape, x1, &[(wq, wk, wv)], eye, &mut trace).unwrap();
    let v = tape.matmul(x1, wv).unwrap();
    assert_eq!(tape.value(out), tape.value(v));
    assert_eq!(tape.value(*trace.last().unwrap()).data(), &[1.0, 1.0]);
}

#[test]
fn readout_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (b, n, m, w, f) = (2, 5, 3, 4, 6);
    let x = random(&mut rng, &[b, n, m, w]);
    let w1 = random(&mut rng, &[w, f]);
    let gamma = random(&mut rng, &[f]);
    let beta = random(&mut rng, &[f]);
    let w2 = random(&mut rng, &[f, 1]);
    let b2 = random(&mut rng, &[1]);
    let mean: Vec<f64> = (0..f).map(|_| rng.random_range(-0.5..0.5)).collect();
    let var: Vec<f64> = (0..f).map(|_| rng.random_range(0.5..2.0)).collect();
    let eps = 1e-5;

    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let v = ReadoutVars {
        w1: tape.constant(w1.clone()),
        gamma: tape.constant(gamma.clone()),
        beta: tape.constant(beta.clone()),
        w2: tape.constant(w2.clone()),
        b2: tape.constant(b2.clone()),
    };
    let floor = tape.constant(Tensor::from_fn(&[n], |i| -0.1 * i as f64));
    let (y, _) = layers::readout(
        &mut tape,
        xv,
        v,
        Norm::Running {
            mean: &mean,
            var: &var,
            eps,
        },
        Some(floor),
    )
    .unwrap();
    for bi in 0..b {
        for ni in 0..n {
            let mut out = b2.data()[0];
            for j in 0..f {
                let pre: f64 = (0..w).map(|c| x.get(&[bi, ni, m - 1, c]) * w1.get(&[c, j])).sum();
                let bn = (pre - mean[j]) / (var[j] + eps).sqrt() * gamma.data()[j] + beta.data()[j];
                out += bn.max(0.0) * w2.data()[j];
            }
            let expected = out.max(-0.1 * ni as f64);
            assert!((tape.value(y).get(&[bi, ni]) - expected).abs() < TOL);
        }
    }

    let zero = tape.constant(Tensor::zeros(&[f, 1]));
    let zb = tape.constant(Tensor::zeros(&[1]));
    let (y, stats) = layers::readout(&mut tape, xv, ReadoutVars { w2: zero, b2: zb, ..v }, Norm::Batch { eps }, None).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    assert_eq!(stats.unwrap().count, b * n);
    let (y, _) = layers::readout(&mut tape, xv, v, Norm::Batch { eps }, None).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v >= 0.0));
}

#[test]
fn forward_zero_params_and_purity() {
    let (mut model, x, masks) = spatial_fixture(7, false);
    let a = model.predict(&x, &masks, None).unwrap();
    let b = model.predict(&x, &masks, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.shape(), &[2, 5]);
    model.params.tensors.iter_mut().for_each(|t| t.data_mut().iter_mut().for_each(|v| *v = 0.0));
    let z = model.predict(&Tensor::zeros(&[2, 5, 4]), &masks, None).unwrap();
    assert!(z.data().iter().all(|&v| v == 0.0));
}

#[test]
fn output_shape_for_two_and_three_graphs() {
    for g in [2usize, 3] {
        let mut cfg = ModelConfig::new(4, 5, g, 6);
        cfg.heads = 2;
        let model = Model::new(cfg, 1).unwrap();
        let adj = [ring(5), star(5), ring(5)];
        let refs: Vec<&Adjacency> = adj.iter().take(g).collect();
        let masks = GraphMasks::from_adjacency(&refs).unwrap();
        let y = model.predict(&Tensor::ones(&[3, 5, 4]), &masks, None).unwrap();
        assert_eq!(y.shape(), &[3, 5]);
    }
}

#[test]
fn node_permutation_equivariance() {
    let (model, x, _) = spatial_fixture(11, false);
    let perm = [3usize, 0, 4, 1, 2];
    let graphs = [ring(5), Adjacency::from_edges(5, &[(0, 2), (1, 3), (3, 4)]).unwrap()];
    let permuted: Vec<Adjacency> = graphs
        .iter()
        .map(|a| {
            let edges: Vec<(usize, usize)> = a
                .edges()
                .into_iter()
                .map(|(i, j)| {
                    let (pi, pj) = (perm.iter().position(|&p| p == i).unwrap(), perm.iter().position(|&p| p == j).unwrap());
                    (pi.min(pj), pi.max(pj))
                })
                .collect();
            Adjacency::from_edges(5, &edges).unwrap()
        })
        .collect();
    // new node k is old node perm[k]
    let xp = Tensor::from_fn(&[2, 5, 4], |p| {
        let (b, k, t) = (p / 20, (p / 4) % 5, p % 4);
        x.get(&[b, perm[k], t])
    });
    let m1 = GraphMasks::from_adjacency(&[&graphs[0], &graphs[1]]).unwrap();
    let m2 = GraphMasks::from_adjacency(&[&permuted[0], &permuted[1]]).unwrap();
    let y = model.predict(&x, &m1, None).unwrap();
    let yp = model.predict(&xp, &m2, None).unwrap();
    for b in 0..2 {
        for k in 0..5 {
            assert!((yp.get(&[b, k]) - y.get(&[b, perm[k]])).abs() < 1e-12);
        }
    }
}

fn as_tensor_error(e: vgnn_core::model::ModelError) -> TensorError {
    TensorError::Invalid {
        op: "forward",
        msg: e.to_string(),
    }
}

#[test]
fn whole_model_gradient_check() {
    let mut cfg = ModelConfig::new(4, 6, 2, 6);
    cfg.heads = 2;
    let model = Model::new(cfg, 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let x = random(&mut rng, &[2, 6, 4]);
    let target = random(&mut rng, &[2, 6]);
    let masks = GraphMasks::from_adjacency(&[&ring(6), &star(6)]).unwrap();
    let report = grad_check_many(
        |tape, vars| {
            let xv = tape.constant(x.clone());
            let out = model.forward(tape, vars, xv, &masks, None, Mode::Eval).map_err(as_tensor_error)?;
            let tv = tape.constant(target.clone());
            let d = tape.sub(out.pred, tv)?;
            let l = tape.smooth_l1(d);
            Ok(tape.mean(l))
        },
        &model.params.tensors,
        1e-5,
    )
    .unwrap();
    assert!(report.passes(1e-4), "{report:?}");
}

#[test]
fn attention_rows_are_normalized() {
    let (model, x, masks) = spatial_fixture(13, false);
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let xv = tape.constant(x);
    let out = model.forward(&mut tape, &vars, xv, &masks, None, Mode::Train).unwrap();
    assert_eq!(out.gat_attention.len(), 2 * 2 * 2);
    assert_eq!(out.mhsa_attention.len(), 2);
    for (k, &a) in out.gat_attention.iter().enumerate() {
        let mask: &Mask = &masks.masks()[k / 4];
        let n = 5;
        for (r, row) in tape.value(a).data().chunks(n).enumerate() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < TOL);
            for (j, &v) in row.iter().enumerate() {
                if !mask.keep()[(r % n) * n + j] {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }
    for &a in &out.mhsa_attention {
        for row in tape.value(a).data().chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < TOL);
        }
    }
}

#[test]
fn checkpoint_roundtrip() {
    let (model, x, masks) = spatial_fixture(17, false);
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path()).unwrap();
    let back = Model::load(dir.path()).unwrap();
    assert_eq!(back, model);
    assert_eq!(back.predict(&x, &masks, None).unwrap(), model.predict(&x, &masks, None).unwrap());
}
