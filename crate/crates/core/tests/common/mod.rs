//! Reference computations shared by the test suites.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::BTreeMap;

use moocshift::data::Cohort;
use moocshift::eval::mds_embed;
use moocshift::nn::{bce_loss, mse_loss, LayerSpec, Network, Tensor};
use moocshift::repr::{fit_pca, pca_transform};
use moocshift::transfer::{kmm_weights, KmmConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const DRAWS: u64 = 100;

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-8)
}

pub fn random_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Scalar objective `sum(output * probe)`, so its output gradient is `probe`.
pub fn objective(net: &Network, x: &Tensor, probe: &Tensor) -> f64 {
    net.infer(x)
        .unwrap()
        .data()
        .iter()
        .zip(probe.data())
        .map(|(a, b)| a * b)
        .sum()
}

/// Returns the worst relative error over parameters and inputs.
pub fn check(specs: Vec<LayerSpec>, sample: &[usize], seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::build(specs, sample, seed).unwrap();
    for p in net.params_mut() {
        *p = rng.random_range(-0.8..0.8);
    }
    let mut shape = vec![2];
    shape.extend_from_slice(sample);
    let x = random_tensor(shape, &mut rng);
    let mut out_shape = vec![2];
    out_shape.extend_from_slice(net.output_shape());
    let probe = random_tensor(out_shape, &mut rng);

    net.forward(&x).unwrap();
    let grads = net.backward(&probe).unwrap();

    let mut numeric = vec![0.0; net.num_params()];
    for i in 0..net.num_params() {
        let orig = net.params()[i];
        net.params_mut()[i] = orig + H;
        let up = objective(&net, &x, &probe);
        net.params_mut()[i] = orig - H;
        let down = objective(&net, &x, &probe);
        net.params_mut()[i] = orig;
        numeric[i] = (up - down) / (2.0 * H);
    }
    let mut numeric_in = vec![0.0; x.len()];
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += H;
        let mut xm = x.clone();
        xm.data_mut()[i] -= H;
        numeric_in[i] = (objective(&net, &xp, &probe) - objective(&net, &xm, &probe)) / (2.0 * H);
    }
    let e_params = if numeric.is_empty() {
        0.0
    } else {
        rel_err(&grads.params, &numeric)
    };
    e_params.max(rel_err(grads.input.data(), &numeric_in))
}

/// Weighted BCE against central differences in the probabilities.
pub fn bce_error(draw: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(draw);
    let n = 7;
    let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.95)).collect();
    let y: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
    let (_, g) = bce_loss(&p, &y, Some(&w)).unwrap();
    let numeric: Vec<f64> = (0..n)
        .map(|i| {
            let mut a = p.clone();
            a[i] += H;
            let mut b = p.clone();
            b[i] -= H;
            (bce_loss(&a, &y, Some(&w)).unwrap().0 - bce_loss(&b, &y, Some(&w)).unwrap().0)
                / (2.0 * H)
        })
        .collect();
    rel_err(&g, &numeric)
}

pub fn mse_error(draw: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(draw);
    let o = random_tensor(vec![3, 5], &mut rng);
    let t = random_tensor(vec![3, 5], &mut rng);
    let (_, g) = mse_loss(&o, &t).unwrap();
    let numeric: Vec<f64> = (0..o.len())
        .map(|i| {
            let mut a = o.clone();
            a.data_mut()[i] += H;
            let mut b = o.clone();
            b.data_mut()[i] -= H;
            (mse_loss(&a, &t).unwrap().0 - mse_loss(&b, &t).unwrap().0) / (2.0 * H)
        })
        .collect();
    rel_err(g.data(), &numeric)
}

pub fn gaussian(n: usize, d: usize, shift: f64, scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let g = Normal::new(0.0, 1.0).unwrap();
    let data = (0..n * d).map(|_| shift + scale * g.sample(rng)).collect();
    Tensor::new(vec![n, d], data).unwrap()
}

/// Covariance with divisor n-1, written out directly.
pub fn cov(x: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mean: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| x[i * d + j]).sum::<f64>() / n as f64)
        .collect();
    let mut c = vec![0.0; d * d];
    for a in 0..d {
        for b in 0..d {
            c[a * d + b] = (0..n)
                .map(|i| (x[i * d + a] - mean[a]) * (x[i * d + b] - mean[b]))
                .sum::<f64>()
                / (n - 1) as f64;
        }
    }
    c
}

pub fn coral_ref(s: &[f64], t: &[f64], n: usize, m: usize, d: usize) -> f64 {
    let (cs, ct) = (cov(s, n, d), cov(t, m, d));
    cs.iter()
        .zip(&ct)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / (4.0 * (d * d) as f64)
}

pub fn rbf(a: &[f64], b: &[f64], sigma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (-d2 / (2.0 * sigma * sigma)).exp()
}

pub fn kmm_objective(w: &[f64], xs: &Tensor, xt: &Tensor, sigma: f64) -> f64 {
    let (n, m) = (xs.batch() as f64, xt.batch() as f64);
    let mut v = 0.0;
    for i in 0..xs.batch() {
        for j in 0..xs.batch() {
            v += w[i] * w[j] * rbf(xs.sample(i), xs.sample(j), sigma) / (n * n);
        }
        for j in 0..xt.batch() {
            v -= 2.0 * w[i] * rbf(xs.sample(i), xt.sample(j), sigma) / (n * m);
        }
    }
    for i in 0..xt.batch() {
        for j in 0..xt.batch() {
            v += rbf(xt.sample(i), xt.sample(j), sigma) / (m * m);
        }
    }
    v
}

/// Dykstra's alternating projection onto the box and the sum slab.
pub fn dykstra(v: &[f64], bound: f64, lo: f64, hi: f64) -> Vec<f64> {
    let n = v.len();
    let mut x = v.to_vec();
    let (mut p, mut q) = (vec![0.0; n], vec![0.0; n]);
    for _ in 0..2000 {
        let y: Vec<f64> = x
            .iter()
            .zip(&p)
            .map(|(a, b)| (a + b).clamp(0.0, bound))
            .collect();
        p = x
            .iter()
            .zip(&p)
            .zip(&y)
            .map(|((a, b), c)| a + b - c)
            .collect();
        let z: Vec<f64> = y.iter().zip(&q).map(|(a, b)| a + b).collect();
        let s: f64 = z.iter().sum();
        let shift = if s > hi {
            (hi - s) / n as f64
        } else if s < lo {
            (lo - s) / n as f64
        } else {
            0.0
        };
        let xn: Vec<f64> = z.iter().map(|a| a + shift).collect();
        q = y
            .iter()
            .zip(&q)
            .zip(&xn)
            .map(|((a, b), c)| a + b - c)
            .collect();
        x = xn;
    }
    x.iter().map(|a| a.clamp(0.0, bound)).collect()
}

/// Plain projected gradient descent run for a long time.
pub fn kmm_reference(xs: &Tensor, xt: &Tensor, sigma: f64, bound: f64, eps: f64) -> Vec<f64> {
    let (n, m) = (xs.batch(), xt.batch());
    let nf = n as f64;
    let k: Vec<f64> = (0..n * n)
        .map(|ij| rbf(xs.sample(ij / n), xs.sample(ij % n), sigma))
        .collect();
    let kappa: Vec<f64> = (0..n)
        .map(|i| {
            (0..m)
                .map(|j| rbf(xs.sample(i), xt.sample(j), sigma))
                .sum::<f64>()
                / m as f64
        })
        .collect();
    // Gershgorin bound on the largest eigenvalue of K.
    let lmax = (0..n)
        .map(|i| k[i * n..(i + 1) * n].iter().sum::<f64>())
        .fold(0.0, f64::max);
    let step = nf * nf / (2.0 * lmax);
    let mut w = vec![1.0; n];
    for _ in 0..3000 {
        let g: Vec<f64> = (0..n)
            .map(|i| {
                2.0 * (0..n).map(|j| k[i * n + j] * w[j]).sum::<f64>() / (nf * nf)
                    - 2.0 * kappa[i] / nf
            })
            .collect();
        let y: Vec<f64> = w.iter().zip(&g).map(|(a, b)| a - step * b).collect();
        w = dykstra(&y, bound, nf * (1.0 - eps), nf * (1.0 + eps));
    }
    w
}

pub fn auc_exhaustive(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &yi) in labels.iter().enumerate() {
        for (j, &yj) in labels.iter().enumerate() {
            if yi && !yj {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Dropout weeks from a scan of the weekly event log, in cohort order.
pub fn brute_force_dropout_weeks(cohort: &Cohort) -> Vec<usize> {
    let vocab = cohort.vocabulary();
    let records = moocshift::data::counts_to_records(&cohort.student_counts(), vocab);
    let mut last: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &records {
        if r.count > 0 && vocab.is_video(vocab.index_of(&r.event_type).unwrap()) {
            let w = last.entry(&r.student_id).or_insert(0);
            *w = (*w).max(r.week);
        }
    }
    cohort
        .students()
        .iter()
        .map(|id| (last.get(id.as_str()).copied().unwrap_or(0) + 1).max(2))
        .collect()
}

/// Classic Jacobi: rotate away the largest off-diagonal entry each step.
pub fn oracle_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| a[i * n..(i + 1) * n].to_vec()).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| f64::from(i == j)).collect())
        .collect();
    for _ in 0..20_000 {
        let (mut p, mut q, mut best) = (0, 1, 0.0);
        for i in 0..n {
            for j in i + 1..n {
                if m[i][j].abs() > best {
                    best = m[i][j].abs();
                    p = i;
                    q = j;
                }
            }
        }
        if best < 1e-14 {
            break;
        }
        let phi = 0.5 * (2.0 * m[p][q]).atan2(m[q][q] - m[p][p]);
        let (s, c) = phi.sin_cos();
        for k in 0..n {
            let (kp, kq) = (m[k][p], m[k][q]);
            m[k][p] = c * kp - s * kq;
            m[k][q] = s * kp + c * kq;
        }
        for k in 0..n {
            let (pk, qk) = (m[p][k], m[q][k]);
            m[p][k] = c * pk - s * qk;
            m[q][k] = s * pk + c * qk;
        }
        for row in v.iter_mut() {
            let (kp, kq) = (row[p], row[q]);
            row[p] = c * kp - s * kq;
            row[q] = s * kp + c * kq;
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| m[j][j].partial_cmp(&m[i][i]).unwrap());
    let vals = idx.iter().map(|&i| m[i][i]).collect();
    let vecs = idx
        .iter()
        .map(|&i| (0..n).map(|k| v[k][i]).collect())
        .collect();
    (vals, vecs)
}

/// Largest deviation of `fit_pca` from the Jacobi oracle on one random
/// 50 x 13 matrix: eigenvalues and projections, up to component sign.
pub fn pca_deviation(rng: &mut ChaCha8Rng) -> f64 {
    let (n, d) = (50, 13);
    let x = Tensor::new(
        vec![n, d],
        (0..n * d).map(|_| rng.sample(StandardNormal)).collect(),
    )
    .unwrap();
    let mean: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| x.sample(i)[j]).sum::<f64>() / n as f64)
        .collect();
    let (vals, vecs) = oracle_eigen(&cov(x.data(), n, d), d);
    let model = fit_pca(&x, d).unwrap();
    let proj = pca_transform(&model, &x).unwrap();
    let mut worst: f64 = 0.0;
    for c in 0..d {
        worst = worst.max((model.explained_variance[c] - vals[c]).abs());
        let dot: f64 = (0..d)
            .map(|k| model.components[c * d + k] * vecs[c][k])
            .sum();
        for i in 0..n {
            let r = x.sample(i);
            let expect = dot.signum() * (0..d).map(|k| (r[k] - mean[k]) * vecs[c][k]).sum::<f64>();
            worst = worst.max((proj.sample(i)[c] - expect).abs());
        }
    }
    worst
}

/// Normalized stress of `mds_embed` on a random planted planar configuration.
pub fn planted_mds_stress(rng: &mut ChaCha8Rng) -> f64 {
    let m = rng.random_range(3..=12);
    let pts: Vec<(f64, f64)> = (0..m)
        .map(|_| (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)))
        .collect();
    let dist = |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    let mut d = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            d[i * m + j] = dist(pts[i], pts[j]);
        }
    }
    let c = mds_embed(&d, m, 2).unwrap();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..m {
        for j in 0..m {
            let e = dist((c[2 * i], c[2 * i + 1]), (c[2 * j], c[2 * j + 1]));
            num += (e - d[i * m + j]).powi(2);
            den += d[i * m + j].powi(2);
        }
    }
    num / den
}

/// `kmm_weights` against the long-run reference on shifted samples of at
/// most 20 points: (objective gap, feasibility holds).
pub fn kmm_gap(rng: &mut ChaCha8Rng) -> (f64, bool) {
    let ns = 8 + rng.random_range(0..13);
    let nt = 8 + rng.random_range(0..13);
    let xs = gaussian(ns, 3, 0.0, 1.0, rng);
    let xt = gaussian(nt, 3, 0.7, 0.6, rng);
    let cfg = KmmConfig {
        sigma: Some(1.0),
        ..KmmConfig::default()
    };
    let w = kmm_weights(&xs, &xt, &cfg, 0).unwrap();
    let sum: f64 = w.weights.iter().sum();
    let feasible = w
        .weights
        .iter()
        .all(|&v| (0.0..=cfg.bound + 1e-12).contains(&v))
        && (sum / ns as f64 - 1.0).abs() <= cfg.epsilon_mean + 1e-9;
    let ours = kmm_objective(&w.weights, &xs, &xt, 1.0);
    let reference = kmm_objective(
        &kmm_reference(&xs, &xt, 1.0, cfg.bound, cfg.epsilon_mean),
        &xs,
        &xt,
        1.0,
    );
    (
        ours - reference,
        feasible && (ours - w.objective).abs() < 1e-9,
    )
}

/// Random scores with many ties on even draws; `None` when one class is empty.
pub fn scored_set(rng: &mut ChaCha8Rng, ties: bool) -> Option<(Vec<f64>, Vec<bool>)> {
    let n = rng.random_range(2..=100);
    let levels = if ties { 4 } else { 1_000_000 };
    let scores: Vec<f64> = (0..n)
        .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
        .collect();
    let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
    (labels.iter().any(|&y| y) && labels.iter().any(|&y| !y)).then_some((scores, labels))
}
