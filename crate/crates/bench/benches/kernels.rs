use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use moocshift::data::ObservedCohort;
use moocshift::eval::{auc, proxy_a_distance, PadConfig};
use moocshift::nn::{presets, Network, Tensor};
use moocshift::synth::{generate_cohort, GeneratorConfig};
use moocshift::transfer::{coral_loss, kmm_weights, train_naive, KmmConfig, MethodConfig};

fn random(shape: Vec<usize>, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random::<f64>()).collect()).unwrap()
}

fn kernels(c: &mut Criterion) {
    let x = random(vec![128, 5, 13], 1);
    let net = Network::build(presets::lstm_predictor(), &[5, 13], 0).unwrap();
    c.bench_function("lstm_predictor_forward_128x5x13", |b| {
        b.iter(|| net.infer(black_box(&x)).unwrap())
    });

    let (s, t) = (random(vec![512, 8], 2), random(vec![512, 8], 3));
    c.bench_function("coral_loss_512x8", |b| {
        b.iter(|| coral_loss(black_box(&s), black_box(&t)).unwrap())
    });

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let scores: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
    let labels: Vec<bool> = (0..10_000).map(|_| rng.random()).collect();
    c.bench_function("auc_10k", |b| {
        b.iter(|| auc(black_box(&scores), black_box(&labels)).unwrap())
    });

    let mut group = c.benchmark_group("kmm");
    group.sample_size(10);
    for n in [100, 400] {
        let (xs, xt) = (random(vec![n, 20], 5), random(vec![n, 20], 6));
        let cfg = KmmConfig {
            max_iter: 200,
            ..KmmConfig::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| kmm_weights(&xs, &xt, &cfg, 0).unwrap())
        });
    }
    group.finish();
}

fn pipelines(c: &mut Criterion) {
    let mut group = c.benchmark_group("pipelines");
    group.sample_size(10);
    let source = generate_cohort(&GeneratorConfig::new("s", 1000, 6, 1))
        .unwrap()
        .cohort;
    let target = generate_cohort(&GeneratorConfig::new("t", 1000, 6, 2))
        .unwrap()
        .cohort;
    group.bench_function("generate_cohort_1000x6", |b| {
        b.iter(|| generate_cohort(&GeneratorConfig::new("g", 1000, 6, 3)).unwrap())
    });
    let flat = |c: &moocshift::data::Cohort| {
        let s = c.slice_for_week(4, true).unwrap();
        let x = s.features;
        x.clone().reshape(vec![x.batch(), x.sample_len()]).unwrap()
    };
    let (xs, xt) = (flat(&source), flat(&target));
    group.bench_function("pad_pooled_week4", |b| {
        b.iter(|| proxy_a_distance(&xs, &xt, &PadConfig::default(), 0).unwrap())
    });
    let mut cfg = MethodConfig::default();
    cfg.predictor.epochs = 10;
    let observed = ObservedCohort::new(&target, 4).unwrap();
    group.bench_function("naive_week4_10_epochs", |b| {
        b.iter(|| train_naive(&source, observed.week(), &cfg, 0).unwrap())
    });
    group.finish();
}

criterion_group!(benches, kernels, pipelines);
criterion_main!(benches);
