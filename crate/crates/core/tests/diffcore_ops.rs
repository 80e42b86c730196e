//! Gradient checks and numeric invariants for every differentiable op.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vgnn_core::diffcore::{grad_check, grad_check_many, Mask, Tape, Tensor, TensorError, Var};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const SHAPES_PER_OP: u64 = 10;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.5..1.5))
}

/// Same as `rand_tensor` but keeps entries at least `gap` away from zero.
fn rand_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.random_range(gap..1.5);
        if rng.random_bool(0.5) { v } else { -v }
    })
}

fn rand_shape(rng: &mut ChaCha8Rng, rank: usize) -> Vec<usize> {
    (0..rank).map(|_| rng.random_range(1..5)).collect()
}

/// Reduces `v` to a scalar through a fixed random weighting so every output
/// coordinate contributes a distinct gradient.
fn contract(tape: &mut Tape, v: Var, seed: u64) -> Result<Var, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let w = rand_tensor(&mut rng, tape.shape(v));
    let w = tape.constant(w);
    let p = tape.mul(v, w)?;
    Ok(tape.sum(p))
}

fn check_many(name: &str, inputs: &[Tensor], seed: u64, f: impl Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>) {
    let r = grad_check_many(
        |tape, vars| {
            let out = f(tape, vars)?;
            contract(tape, out, seed)
        },
        inputs,
        H,
    )
    .unwrap_or_else(|e| panic!("{name}: {e}"));
    assert!(r.passes(TOL), "{name} (seed {seed}): {r:?}");
}

fn for_seeds(mut body: impl FnMut(u64, &mut ChaCha8Rng)) {
    for seed in 0..SHAPES_PER_OP {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        body(seed, &mut rng);
    }
}

#[test]
fn matmul_shared_and_batched() {
    for_seeds(|seed, rng| {
        let lead = { let r = rng.random_range(0..3); rand_shape(rng, r) };
        let (m, k, n) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..5));
        let mut sa = lead.clone();
        sa.extend([m, k]);
        let a = rand_tensor(rng, &sa);
        let w = rand_tensor(rng, &[k, n]);
        check_many("matmul shared", &[a.clone(), w], seed, |t, v| t.matmul(v[0], v[1]));
        let mut sb = lead.clone();
        sb.extend([k, n]);
        let b = rand_tensor(rng, &sb);
        check_many("matmul batched", &[a, b], seed, |t, v| t.matmul(v[0], v[1]));
    });
}

#[test]
fn conv1d_same_all_kernel_sizes() {
    for_seeds(|seed, rng| {
        let k = [1, 3, 5, 7][seed as usize % 4];
        let series = rng.random_range(1..4);
        let len = rng.random_range(1..9);
        let (cin, cout) = (rng.random_range(1..4), rng.random_range(1..4));
        let x = rand_tensor(rng, &[series, len, cin]);
        let w = rand_tensor(rng, &[k, cin, cout]);
        check_many("conv1d_same", &[x, w], seed, |t, v| t.conv1d_same(v[0], v[1]));
    });
}

#[test]
fn elementwise_binary_ops() {
    for_seeds(|seed, rng| {
        let shape = { let r = rng.random_range(1..4); rand_shape(rng, r) };
        let a = rand_tensor(rng, &shape);
        let b = rand_tensor(rng, &shape);
        let suffix = rand_tensor(rng, &shape[1..]);
        check_many("add", &[a.clone(), b.clone()], seed, |t, v| t.add(v[0], v[1]));
        check_many("add broadcast", &[a.clone(), suffix.clone()], seed, |t, v| t.add(v[0], v[1]));
        check_many("sub broadcast", &[a.clone(), suffix], seed, |t, v| t.sub(v[0], v[1]));
        check_many("mul", &[a.clone(), b], seed, |t, v| t.mul(v[0], v[1]));
        // max_with away from ties: floor well separated from a.
        let floor = Tensor::from_fn(&shape[shape.len() - 1..], |i| if i % 2 == 0 { -3.0 } else { 3.0 });
        check_many("max_with", &[a, floor], seed, |t, v| t.max_with(v[0], v[1]));
    });
}

#[test]
fn elementwise_unary_ops() {
    for_seeds(|seed, rng| {
        let shape = { let r = rng.random_range(1..4); rand_shape(rng, r) };
        let x = rand_tensor(rng, &shape);
        check_many("scale", std::slice::from_ref(&x), seed, |t, v| Ok(t.scale(v[0], -1.7)));
        check_many("sigmoid", std::slice::from_ref(&x), seed, |t, v| Ok(t.sigmoid(v[0])));
        check_many("smooth_l1", &[x.scale_free(2.0)], seed, |t, v| Ok(t.smooth_l1(v[0])));
        // Kinks excluded by construction.
        let xk = rand_away_from_zero(rng, &shape, 0.05);
        check_many("relu", std::slice::from_ref(&xk), seed, |t, v| Ok(t.relu(v[0])));
        check_many("leaky_relu", &[xk], seed, |t, v| Ok(t.leaky_relu(v[0], 0.2)));
    });
}

trait ScaleFree {
    fn scale_free(&self, f: f64) -> Tensor;
}
impl ScaleFree for Tensor {
    fn scale_free(&self, f: f64) -> Tensor {
        Tensor::new(self.shape().to_vec(), self.data().iter().map(|v| v * f).collect()).unwrap()
    }
}

#[test]
fn sigmoid_chain_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&mut rng, &[5]);
    let r = grad_check(
        |t, x| {
            let a = t.sigmoid(x);
            let b = t.scale(a, 3.0);
            let c = t.sigmoid(b);
            Ok(t.sum(c))
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(r.max_rel_error < 1e-6, "{r:?}");
}

#[test]
fn softmax_plain_and_masked() {
    for_seeds(|seed, rng| {
        let mut shape = { let r = rng.random_range(0..3); rand_shape(rng, r) };
        let n = rng.random_range(2..6);
        shape.push(n);
        let x = rand_tensor(rng, &shape);
        check_many("softmax", std::slice::from_ref(&x), seed, |t, v| t.softmax(v[0], None));
        let mut keep: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
        keep[0] = true;
        let mask = Mask::new(vec![n], keep).unwrap();
        check_many("softmax masked", &[x], seed, |t, v| t.softmax(v[0], Some(&mask)));
    });
}

#[test]
fn batchnorm_train_and_eval() {
    for_seeds(|seed, rng| {
        let rows = rng.random_range(2..5);
        let c = rng.random_range(1..4);
        let x = rand_tensor(rng, &[rows, 2, c]);
        let gamma = rand_tensor(rng, &[c]);
        let beta = rand_tensor(rng, &[c]);
        check_many("batchnorm train", &[x.clone(), gamma.clone(), beta.clone()], seed, |t, v| {
            Ok(t.batchnorm_train(v[0], v[1], v[2], 1e-5)?.0)
        });
        let mean: Vec<f64> = (0..c).map(|i| 0.1 * i as f64).collect();
        let var: Vec<f64> = (0..c).map(|i| 0.5 + i as f64).collect();
        check_many("batchnorm eval", &[x, gamma, beta], seed, |t, v| {
            t.batchnorm_eval(v[0], v[1], v[2], &mean, &var, 1e-5)
        });
    });
}

#[test]
fn reductions_and_layout_ops() {
    for_seeds(|seed, rng| {
        let rank = rng.random_range(1..4);
        let shape = rand_shape(rng, rank);
        let x = rand_tensor(rng, &shape);
        let axis = rng.random_range(0..rank);
        check_many("sum", std::slice::from_ref(&x), seed, |t, v| Ok(t.sum(v[0])));
        check_many("mean", std::slice::from_ref(&x), seed, |t, v| Ok(t.mean(v[0])));
        check_many("sum_axis", std::slice::from_ref(&x), seed, |t, v| t.sum_axis(v[0], axis));
        check_many("mean_axis", std::slice::from_ref(&x), seed, |t, v| t.mean_axis(v[0], axis));

        let mut other_shape = shape.clone();
        other_shape[axis] = rng.random_range(1..4);
        let y = rand_tensor(rng, &other_shape);
        check_many("concat", &[x.clone(), y], seed, |t, v| t.concat(&[v[0], v[1]], axis));

        let start = rng.random_range(0..shape[axis]);
        let len = rng.random_range(1..=shape[axis] - start);
        check_many("narrow", std::slice::from_ref(&x), seed, |t, v| t.narrow(v[0], axis, start, len));

        let mut axes: Vec<usize> = (0..rank).collect();
        axes.rotate_left(seed as usize % rank);
        check_many("permute", std::slice::from_ref(&x), seed, |t, v| t.permute(v[0], &axes));

        let flat = vec![x.len()];
        check_many("reshape", &[x], seed, |t, v| t.reshape(v[0], &flat));

        let mut ps = { let r = rng.random_range(0..2); rand_shape(rng, r) };
        ps.push(rng.random_range(1..5));
        let a = rand_tensor(rng, &ps);
        let b = rand_tensor(rng, &ps);
        check_many("pairwise_sum", &[a, b], seed, |t, v| t.pairwise_sum(v[0], v[1]));
    });
}

#[test]
fn softmax_rows_normalized_and_masked_exactly_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let n = rng.random_range(2..8);
        let rows = rng.random_range(1..6);
        let x = Tensor::from_fn(&[rows, n], |_| rng.random_range(-30.0..30.0));
        let mut keep: Vec<bool> = (0..rows * n).map(|_| rng.random_bool(0.5)).collect();
        for r in 0..rows {
            keep[r * n + r % n] = true;
        }
        let mask = Mask::new(vec![rows, n], keep.clone()).unwrap();
        let mut t = Tape::new();
        let xv = t.constant(x);
        let y = t.softmax(xv, Some(&mask)).unwrap();
        for (r, row) in t.value(y).data().chunks(n).enumerate() {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            for (j, &p) in row.iter().enumerate() {
                assert!(p >= 0.0);
                if !keep[r * n + j] {
                    assert_eq!(p, 0.0);
                }
            }
        }
    }
}

#[test]
fn softmax_equal_logits_is_uniform() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::filled(&[4], 2.5));
    let y = t.softmax(x, None).unwrap();
    assert_eq!(t.value(y).data(), &[0.25; 4]);
}

#[test]
fn fully_masked_row_is_an_error() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::zeros(&[2, 2]));
    let mask = Mask::new(vec![2, 2], vec![true, false, false, false]).unwrap();
    assert!(t.softmax(x, Some(&mask)).is_err());
}

#[test]
fn batchnorm_train_standardizes_channels() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let c = 3;
    let x = Tensor::from_fn(&[8, 5, c], |i| rng.random_range(-4.0..9.0) * (1 + i % c) as f64);
    let mut t = Tape::new();
    let xv = t.constant(x);
    let g = t.constant(Tensor::ones(&[c]));
    let b = t.constant(Tensor::zeros(&[c]));
    let (y, stats) = t.batchnorm_train(xv, g, b, 0.0).unwrap();
    assert_eq!(stats.count, 40);
    let y = t.value(y).data();
    for ch in 0..c {
        let vals: Vec<f64> = y.iter().skip(ch).step_by(c).copied().collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-9, "{mean}");
        assert!((var - 1.0).abs() < 1e-6, "{var}");
    }
}

#[test]
fn conv1d_identity_kernel_and_length() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for k in [1, 3, 5, 7] {
        let x = rand_tensor(&mut rng, &[2, 6, 3]);
        let mut w = Tensor::zeros(&[k, 3, 3]);
        for c in 0..3 {
            w.data_mut()[((k / 2) * 3 + c) * 3 + c] = 1.0;
        }
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let wv = t.constant(w);
        let y = t.conv1d_same(xv, wv).unwrap();
        assert_eq!(t.shape(y), &[2, 6, 3]);
        assert_eq!(t.value(y), &x);
    }
    let mut t = Tape::new();
    let xv = t.constant(Tensor::zeros(&[1, 4, 1]));
    let wv = t.constant(Tensor::zeros(&[2, 1, 1]));
    assert!(t.conv1d_same(xv, wv).is_err());
}

#[test]
fn matmul_hand_example_and_shape_error() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let b = t.constant(Tensor::new(vec![3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap());
    let c = t.matmul(a, b).unwrap();
    assert_eq!(t.value(c).data(), &[58.0, 64.0, 139.0, 154.0]);
    let err = t.matmul(a, a).unwrap_err();
    assert!(matches!(err, TensorError::ShapeMismatch { .. }));
    assert!(err.to_string().contains("[2, 3]"));
}

#[test]
fn backward_basics() {
    let x0 = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
    let mut t = Tape::new();
    let x = t.param(x0.clone());
    let s = t.sum(x);
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[1.0; 3]);

    let mut t = Tape::new();
    let x = t.param(x0.clone());
    let sq = t.mul(x, x).unwrap();
    let s = t.sum(sq);
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[2.0, -4.0, 1.0]);

    let mut t = Tape::new();
    let x = t.param(x0);
    assert!(matches!(t.backward(x), Err(TensorError::NonScalarLoss(_))));
}
