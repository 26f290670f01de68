mod common;

use common::pca_deviation;
use moocshift::nn::Tensor;
use moocshift::repr::{
    encode, fit_nn_pca, fit_pca, fit_tpca_and_align, pca_transform, principal_angles,
    train_autoencoder, AeConfig, EmbeddingSet, NnPcaConfig,
};
use moocshift::synth::{generate_cohort, GeneratorConfig};
use moocshift::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::new(
        vec![n, d],
        (0..n * d).map(|_| rng.sample(StandardNormal)).collect(),
    )
    .unwrap()
}

#[test]
fn pca_matches_brute_force_jacobi() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let worst = (0..20).map(|_| pca_deviation(&mut rng)).fold(0.0, f64::max);
    println!("pca vs oracle worst deviation {worst:e}");
    assert!(worst < 1e-8);
}

#[test]
fn pca_rows_orthonormal_and_signed() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(80, 9, &mut rng);
    let m = fit_pca(&x, 4).unwrap();
    for a in 0..4 {
        let row = &m.components[a * 9..(a + 1) * 9];
        let lead = row
            .iter()
            .copied()
            .fold(0.0f64, |s, v| if v.abs() > s.abs() { v } else { s });
        assert!(lead > 0.0);
        for b in 0..4 {
            let dot: f64 = (0..9).map(|k| row[k] * m.components[b * 9 + k]).sum();
            assert!((dot - f64::from(a == b)).abs() < 1e-8);
        }
    }
    assert!(m.explained_variance.windows(2).all(|w| w[0] >= w[1]));
}

fn embedding(
    n: usize,
    units: usize,
    dim: usize,
    f: impl Fn(usize, usize, usize) -> f64,
) -> EmbeddingSet {
    let data = (0..n)
        .flat_map(|i| (0..units).flat_map(move |t| (0..dim).map(move |j| (i, t, j))))
        .map(|(i, t, j)| f(i, t, j))
        .collect();
    EmbeddingSet::new(Tensor::new(vec![n, units, dim], data).unwrap()).unwrap()
}

#[test]
fn tpca_identical_sets_stay_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let noise: Vec<f64> = (0..50 * 3 * 8)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let e = embedding(50, 3, 8, |i, t, j| noise[(i * 3 + t) * 8 + j]);
    let a = fit_tpca_and_align(&e, &e, 6).unwrap();
    assert_eq!(a.source, a.target);
    assert_eq!((a.source.units(), a.source.dim()), (3, 6));
}

#[test]
fn tpca_keeps_low_rank_target_variance_and_drops_source_only_directions() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    // Target varies in dims 0..6 only (plus tiny noise in 6, 7).
    let noise: Vec<f64> = (0..200 * 2 * 8)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let target = embedding(200, 2, 8, |i, t, j| {
        let z = noise[(i * 2 + t) * 8 + j];
        if j < 6 {
            z * (1.0 + j as f64)
        } else {
            1e-3 * z
        }
    });
    let a = fit_tpca_and_align(&target, &target, 6).unwrap();
    let ratio: f64 = a.model.pca.explained_variance_ratio().iter().sum();
    assert!(ratio >= 0.95, "retained {ratio}");

    // Source varies only along dim 7, where the target is (nearly) flat.
    let exact_target = embedding(200, 2, 8, |i, t, j| {
        if j < 6 {
            noise[(i * 2 + t) * 8 + j]
        } else {
            0.0
        }
    });
    let source = embedding(100, 2, 8, |i, _, j| if j == 7 { i as f64 } else { 0.0 });
    let a = fit_tpca_and_align(&exact_target, &source, 6).unwrap();
    let flat = a.source.pooled();
    for c in 0..6 {
        let col: Vec<f64> = (0..flat.batch()).map(|r| flat.sample(r)[c]).collect();
        let m = col.iter().sum::<f64>() / col.len() as f64;
        let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>();
        assert!(var < 1e-18, "component {c} variance {var}");
    }
}

#[test]
fn tpca_reports_rank_deficiency() {
    let target = embedding(40, 2, 8, |i, _, j| {
        if j < 3 {
            ((i * (j + 1)) % 7) as f64
        } else {
            0.0
        }
    });
    match fit_tpca_and_align(&target, &target, 6) {
        Err(Error::RankDeficient { rank, required }) => {
            assert_eq!(required, 6);
            assert!(rank <= 3);
        }
        other => panic!("expected rank error, got {other:?}"),
    }
}

fn small_cohort(types: usize, weeks: usize, n: usize, seed: u64) -> Tensor {
    let mut cfg = GeneratorConfig::new("ae", n, weeks, seed);
    let names: Vec<(String, bool)> = (0..types).map(|i| (format!("t{i}"), i == 0)).collect();
    cfg.vocabulary = moocshift::data::EventVocabulary::from_pairs(&names).unwrap();
    cfg.profile = moocshift::synth::TypeProfile::default_for(&cfg.vocabulary);
    cfg.correlation = (0..types)
        .map(|i| (0..types).map(|j| if i == j { 1.0 } else { 0.3 }).collect())
        .collect();
    let c = generate_cohort(&cfg).unwrap().cohort;
    let rows: Vec<usize> = (0..c.len()).collect();
    c.features(&rows, 1..=weeks - 1)
}

#[test]
fn autoencoder_trains_deterministically_and_reduces_loss() {
    let x = small_cohort(13, 5, 300, 1);
    let cfg = AeConfig {
        epochs: 15,
        ..AeConfig::default()
    };
    let (m1, t1) = train_autoencoder(&[&x], &cfg, 3).unwrap();
    let (_, t2) = train_autoencoder(&[&x], &cfg, 3).unwrap();
    assert_eq!(t1, t2);
    assert!(t1.last().unwrap() < &t1[0]);
    let e = encode(&m1, &x).unwrap();
    assert_eq!((e.len(), e.units(), e.dim()), (300, 4, 8));
    assert_eq!(e, encode(&m1, &x).unwrap());
    let empty = encode(&m1, &Tensor::zeros(vec![0, 4, 13])).unwrap();
    assert!(empty.is_empty());
    assert!(encode(&m1, &Tensor::zeros(vec![2, 3, 13])).is_err());
}

#[test]
fn overcomplete_autoencoder_reconstructs_four_types() {
    let x = small_cohort(4, 4, 1024, 2);
    let cfg = AeConfig {
        epochs: 200,
        batch_size: 16,
        learning_rate: 0.005,
        ..AeConfig::default()
    };
    let (m, trace) = train_autoencoder(&[&x], &cfg, 4).unwrap();
    let mse = m.reconstruction_error(&x).unwrap();
    println!(
        "E=4 reconstruction mse {mse:e} (first epoch {:e})",
        trace[0]
    );
    assert!(mse < 1e-3);
}

#[test]
fn union_autoencoder_fits_both_cohorts() {
    let a = small_cohort(13, 4, 400, 5);
    let b = small_cohort(13, 4, 400, 6);
    let cfg = AeConfig {
        epochs: 30,
        ..AeConfig::default()
    };
    let (m, _) = train_autoencoder(&[&a, &b], &cfg, 7).unwrap();
    let (ea, eb) = (
        m.reconstruction_error(&a).unwrap(),
        m.reconstruction_error(&b).unwrap(),
    );
    assert!(ea.max(eb) <= 2.0 * ea.min(eb), "{ea} vs {eb}");
}

fn planted(n: usize, seed: u64) -> Tensor {
    // Well separated spectrum: 3 strong directions in 8 dims plus small noise.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scales = [3.0, 2.0, 1.5, 0.3, 0.25, 0.2, 0.15, 0.1];
    let basis = moocshift::repr::orthonormal_rows(
        &(0..64)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect::<Vec<_>>(),
        8,
        8,
    );
    let mut data = Vec::with_capacity(n * 8);
    for _ in 0..n {
        let z: Vec<f64> = scales
            .iter()
            .map(|s| s * rng.sample::<f64, _>(StandardNormal))
            .collect();
        data.extend(
            (0..8).map(|j| 1.0 + z.iter().zip(&basis).map(|(zk, b)| zk * b[j]).sum::<f64>()),
        );
    }
    Tensor::new(vec![n, 8], data).unwrap()
}

fn mse(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / a.len() as f64
}

#[test]
fn nn_pca_recovers_pca_subspace() {
    let x = planted(2000, 10);
    let pca = fit_pca(&x, 3).unwrap();
    let optimal = mse(
        &pca.inverse_transform(&pca_transform(&pca, &x).unwrap())
            .unwrap(),
        &x,
    );
    let nn = fit_nn_pca(&x, 3, &NnPcaConfig::default(), 11).unwrap();
    let got = mse(&nn.reconstruct(&x).unwrap(), &x);
    let angles = principal_angles(&nn.projection(), 3, &pca.components, 3, 8).unwrap();
    println!("nn-pca mse {got:e} vs pca {optimal:e}; angles {angles:?}");
    assert!(got <= 1.05 * optimal);
    assert!(angles[0] < 5.0);
}

#[test]
fn nn_pca_full_rank_is_lossless() {
    let x = planted(500, 12);
    let cfg = NnPcaConfig {
        epochs: 3000,
        batch_size: 500,
        ..NnPcaConfig::default()
    };
    let nn = fit_nn_pca(&x, 8, &cfg, 13).unwrap();
    let got = mse(&nn.reconstruct(&x).unwrap(), &x);
    println!("full-rank nn-pca mse {got:e}");
    assert!(got < 1e-6);
}
