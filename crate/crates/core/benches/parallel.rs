use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use vgnn_core::diffcore::{Tape, Tensor};
use vgnn_core::eval::{masks_for, prepare, VariantSpec};
use vgnn_core::graphgen::GraphParams;
use vgnn_core::model::{Mode, Model, ModelOptions};
use vgnn_core::trainer::{smooth_l1_loss, synth_generate, SynthSpec};

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("pool");
    let all = rayon::ThreadPoolBuilder::new().build().expect("pool");
    vec![("sequential", one), ("parallel", all)]
}

fn matmul(c: &mut Criterion) {
    let n = 256;
    let a = Tensor::from_fn(&[n, n], |i| ((i * 7919) % 101) as f64 / 101.0 - 0.5);
    let b = Tensor::from_fn(&[n, n], |i| ((i * 104_729) % 97) as f64 / 97.0 - 0.5);
    let mut group = c.benchmark_group("matmul_256");
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |bench| {
            pool.install(|| {
                bench.iter(|| {
                    let mut tape = Tape::new();
                    let x = tape.param(a.clone());
                    let y = tape.param(b.clone());
                    let z = tape.matmul(x, y).expect("shapes");
                    let s = tape.sum(z);
                    black_box(tape.backward(s).expect("scalar"))
                })
            })
        });
    }
    group.finish();
}

fn train_step(c: &mut Criterion) {
    let data = synth_generate(&SynthSpec::default()).expect("synth");
    let exp = prepare(&data.demand, Some(&data.od), GraphParams::default(), [0.8, 0.1, 0.1], 12).expect("experiment");
    let variant = VariantSpec::full(true);
    let masks = masks_for(&exp.graphs, &variant.graphs).expect("masks");
    let cfg = ModelOptions::default().resolve(12, exp.data.nodes(), masks.len()).expect("config");
    let model = Model::new(cfg, 1).expect("model");
    let (x, y) = exp.data.batch(&exp.data.train[..64]);
    let floor = exp.data.floor();
    let mut group = c.benchmark_group("forward_backward_b64");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |bench| {
            pool.install(|| {
                bench.iter(|| {
                    let mut tape = Tape::new();
                    let vars = model.bind(&mut tape);
                    let xv = tape.constant(x.clone());
                    let fv = tape.constant(floor.clone());
                    let out = model.forward(&mut tape, &vars, xv, &masks, Some(fv), Mode::Train).expect("forward");
                    let yv = tape.constant(y.clone());
                    let loss = smooth_l1_loss(&mut tape, out.pred, yv).expect("loss");
                    black_box(tape.backward(loss).expect("scalar"))
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, matmul, train_step);
criterion_main!(benches);
