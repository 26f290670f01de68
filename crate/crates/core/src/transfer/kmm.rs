//! Kernel mean matching: source-instance weights whose weighted kernel mean
//! matches the target's.

use log::warn;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KmmConfig {
    pub bound: f64,
    pub epsilon_mean: f64,
    /// Gaussian kernel bandwidth; `None` uses the median heuristic.
    #[serde(default)]
    pub sigma: Option<f64>,
    /// Pooled points used for the median heuristic.
    pub bandwidth_sample: usize,
    pub max_iter: usize,
    /// Stop once no weight moves more than this in an iteration.
    pub tolerance: f64,
}

impl Default for KmmConfig {
    fn default() -> Self {
        Self {
            bound: 10.0,
            epsilon_mean: 0.05,
            sigma: None,
            bandwidth_sample: 500,
            max_iter: 1000,
            tolerance: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceWeights {
    pub weights: Vec<f64>,
    pub bound: f64,
    pub sigma: f64,
    /// Squared kernel-mean discrepancy at the returned weights.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl InstanceWeights {
    pub fn mean(&self) -> f64 {
        self.weights.iter().sum::<f64>() / self.weights.len().max(1) as f64
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median pairwise Euclidean distance over a subsample of the pooled rows.
pub fn median_bandwidth(xs: &Tensor, xt: &Tensor, max_points: usize, seed: u64) -> f64 {
    let pooled: Vec<&[f64]> = (0..xs.batch())
        .map(|i| xs.sample(i))
        .chain((0..xt.batch()).map(|i| xt.sample(i)))
        .collect();
    let rows: Vec<&[f64]> = if pooled.len() > max_points.max(2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, pooled.len(), max_points.max(2)).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| pooled[i]).collect()
    } else {
        pooled
    };
    let mut d = Vec::with_capacity(rows.len() * rows.len() / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d.push(sq_dist(rows[i], rows[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    if *m > 0.0 {
        *m
    } else {
        1.0
    }
}

/// Euclidean projection onto `{0 ≤ w ≤ bound, lo ≤ Σw ≤ hi}`.
pub(crate) fn project(v: &[f64], bound: f64, lo: f64, hi: f64) -> Vec<f64> {
    let clipped = |tau: f64| -> f64 { v.iter().map(|x| (x - tau).clamp(0.0, bound)).sum() };
    let s0 = clipped(0.0);
    let tau = if s0 > hi || s0 < lo {
        let goal = if s0 > hi { hi } else { lo };
        let vmax = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let vmin = v.iter().copied().fold(f64::INFINITY, f64::min);
        // clipped(a) = n·bound ≥ goal, clipped(b) = 0 ≤ goal.
        let (mut a, mut b) = (vmin - bound, vmax);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if clipped(mid) > goal {
                a = mid;
            } else {
                b = mid;
            }
        }
        0.5 * (a + b)
    } else {
        0.0
    };
    v.iter().map(|x| (x - tau).clamp(0.0, bound)).collect()
}

/// Weights minimising `‖(1/n_S)Σ w_i φ(s_i) − (1/n_T)Σ φ(t_j)‖²` under
/// `0 ≤ w ≤ B` and `|mean(w) − 1| ≤ ε`, by accelerated projected gradient.
pub fn kmm_weights(
    xs: &Tensor,
    xt: &Tensor,
    config: &KmmConfig,
    seed: u64,
) -> Result<InstanceWeights> {
    let (ns, nt) = (xs.batch(), xt.batch());
    if ns == 0 || nt == 0 {
        return Err(Error::invalid(
            "kernel mean matching needs nonempty source and target",
        ));
    }
    if xs.sample_len() != xt.sample_len() {
        return Err(Error::shape(format!(
            "source rows have {} features, target rows {}",
            xs.sample_len(),
            xt.sample_len()
        )));
    }
    if !(config.bound >= 1.0) || !(config.epsilon_mean >= 0.0) {
        return Err(Error::invalid("KMM needs bound ≥ 1 and epsilon ≥ 0"));
    }
    let sigma = match config.sigma {
        Some(s) if s > 0.0 => s,
        Some(s) => {
            return Err(Error::invalid(format!(
                "kernel bandwidth {s} must be positive"
            )))
        }
        None => median_bandwidth(xs, xt, config.bandwidth_sample, seed),
    };
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let kern = |a: &[f64], b: &[f64]| (-gamma * sq_dist(a, b)).exp();

    let mut k = vec![0.0; ns * ns];
    for i in 0..ns {
        k[i * ns + i] = 1.0;
        for j in 0..i {
            let v = kern(xs.sample(i), xs.sample(j));
            k[i * ns + j] = v;
            k[j * ns + i] = v;
        }
    }
    let kappa: Vec<f64> = (0..ns)
        .map(|i| {
            (0..nt)
                .map(|j| kern(xs.sample(i), xt.sample(j)))
                .sum::<f64>()
                / nt as f64
        })
        .collect();
    let mut ktt = 0.0;
    for i in 0..nt {
        for j in 0..nt {
            ktt += if i == j {
                1.0
            } else {
                kern(xt.sample(i), xt.sample(j))
            };
        }
    }
    let ktt = ktt / (nt * nt) as f64;

    let nsf = ns as f64;
    let matvec = |w: &[f64], out: &mut [f64]| {
        for (i, o) in out.iter_mut().enumerate() {
            *o = k[i * ns..(i + 1) * ns]
                .iter()
                .zip(w)
                .map(|(a, b)| a * b)
                .sum();
        }
    };
    let objective = |w: &[f64], kw: &[f64]| -> f64 {
        let quad: f64 = w.iter().zip(kw).map(|(a, b)| a * b).sum::<f64>() / (nsf * nsf);
        let lin: f64 = w.iter().zip(&kappa).map(|(a, b)| a * b).sum::<f64>() / nsf;
        (quad - 2.0 * lin + ktt).max(0.0)
    };

    // Lipschitz constant of the gradient: 2 λ_max(K) / n_S².
    let mut v = vec![1.0 / nsf.sqrt(); ns];
    let mut kv = vec![0.0; ns];
    let mut lambda = 1.0;
    for _ in 0..100 {
        matvec(&v, &mut kv);
        let norm = kv.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        let next = norm;
        v.iter_mut().zip(&kv).for_each(|(a, b)| *a = b / norm);
        if (next - lambda).abs() <= 1e-9 * next {
            lambda = next;
            break;
        }
        lambda = next;
    }
    let step = (nsf * nsf) / (2.0 * lambda * 1.01);

    let (lo, hi) = (
        nsf * (1.0 - config.epsilon_mean),
        nsf * (1.0 + config.epsilon_mean),
    );
    let mut w = vec![1.0; ns];
    let mut y = w.clone();
    let mut t = 1.0f64;
    let mut ky = vec![0.0; ns];
    let mut kw = vec![0.0; ns];
    matvec(&w, &mut kw);
    let mut f_w = objective(&w, &kw);
    let mut converged = false;
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    for it in 0..config.max_iter {
        iterations = it + 1;
        matvec(&y, &mut ky);
        let target: Vec<f64> = (0..ns)
            .map(|i| y[i] - step * (2.0 * ky[i] / (nsf * nsf) - 2.0 * kappa[i] / nsf))
            .collect();
        let w_next = project(&target, config.bound, lo, hi);
        matvec(&w_next, &mut kw);
        let f_next = objective(&w_next, &kw);
        residual = w_next
            .iter()
            .zip(&w)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if f_next > f_w {
            // Adaptive restart: drop the momentum and retry from w.
            y.clone_from(&w);
            t = 1.0;
            matvec(&w, &mut kw);
            if residual <= config.tolerance {
                converged = true;
                break;
            }
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        y = w_next
            .iter()
            .zip(&w)
            .map(|(a, b)| a + beta * (a - b))
            .collect();
        w = w_next;
        f_w = f_next;
        t = t_next;
        if residual <= config.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("kernel mean matching stopped after {iterations} iterations; residual {residual:e}");
    }
    matvec(&w, &mut kw);
    let objective = objective(&w, &kw);
    Ok(InstanceWeights {
        weights: w,
        bound: config.bound,
        sigma,
        objective,
        iterations,
        converged,
    })
}
