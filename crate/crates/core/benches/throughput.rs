//! Single-thread pool versus the default rayon pool on the hot paths.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::ThreadPool;

use hml_core::config::TrainConfig;
use hml_core::constraint::f_cm;
use hml_core::data::synth::{generate, SynthSpec};
use hml_core::metrics::MetricsReport;
use hml_core::nn::ensemble::stream_rng;
use hml_core::nn::train::batch_gradients;
use hml_core::nn::Ensemble;
use hml_core::uncertainty::FocalKind;

fn pools() -> Vec<(&'static str, ThreadPool)> {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("pool");
    let all = rayon::ThreadPoolBuilder::new().build().expect("pool");
    vec![("sequential", one), ("parallel", all)]
}

fn bench_constraint(c: &mut Criterion) {
    let data = generate(&SynthSpec {
        n_nodes: 500,
        max_depth: 6,
        dag_extra_edges: 50,
        n_obs: 10,
        ..Default::default()
    })
    .expect("spec is valid")
    .dataset;
    let a = data.hierarchy.descendant_matrix();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let probs = Array2::from_shape_fn((1024, a.len()), |_| rng.random::<f64>());
    let mut g = c.benchmark_group("f_cm 1024x500");
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            pool.install(|| b.iter(|| f_cm(probs.view(), &a).expect("widths match")))
        });
    }
    g.finish();
}

fn bench_batch_step(c: &mut Criterion) {
    let d = generate(&SynthSpec {
        n_obs: 256,
        ..Default::default()
    })
    .expect("spec is valid")
    .dataset;
    let a = d.hierarchy.descendant_matrix();
    let cfg = TrainConfig {
        ensemble_size: 10,
        hidden_dim: 128,
        focal: FocalKind::Gmu,
        ..Default::default()
    };
    let ens = Ensemble::init(d.n_features(), d.n_nodes(), &cfg);
    let rows: Vec<usize> = (0..64).collect();
    let batch = d.select_rows(&rows);
    let weights = Array2::ones((batch.len(), batch.n_nodes()));
    let mut g = c.benchmark_group("ensemble batch step M=10 B=64");
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            let mut rngs: Vec<ChaCha8Rng> = (0..10).map(|m| stream_rng(0, 1 + m)).collect();
            pool.install(|| {
                b.iter(|| {
                    batch_gradients(&ens, &mut rngs, batch.features.view(), &batch.labels, &a, weights.view(), &cfg, true)
                        .expect("shapes match")
                })
            })
        });
    }
    g.finish();
}

fn bench_evaluate(c: &mut Criterion) {
    let d = generate(&SynthSpec {
        n_obs: 2000,
        ..Default::default()
    })
    .expect("spec is valid")
    .dataset;
    let cfg = TrainConfig {
        ensemble_size: 10,
        hidden_dim: 128,
        ..Default::default()
    };
    let ens = Ensemble::init(d.n_features(), d.n_nodes(), &cfg);
    let a = d.hierarchy.descendant_matrix();
    let probs = ens.predict_constrained(d.features.view(), &a).expect("widths match");
    let mut g = c.benchmark_group("evaluation N=2000");
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::new("ensemble predict", name), |b| {
            pool.install(|| b.iter(|| ens.predict_constrained(d.features.view(), &a).expect("widths match")))
        });
        g.bench_function(BenchmarkId::new("metrics", name), |b| {
            pool.install(|| {
                b.iter(|| MetricsReport::evaluate(d.hierarchy.node_ids(), probs.view(), &d.labels, 0.5).expect("shapes match"))
            })
        });
    }
    g.finish();
}

criterion_group!(benches, bench_constraint, bench_batch_step, bench_evaluate);
criterion_main!(benches);
