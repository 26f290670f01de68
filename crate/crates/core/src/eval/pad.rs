use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{fit_binary, predict_proba, LayerSpec, Network, Tensor, TrainConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PadMode {
    /// One classifier on whole flattened feature vectors.
    #[default]
    Pooled,
    /// Mean over one classifier per (week, event type) column.
    PerSlice,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PadConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub train_fraction: f64,
    pub mode: PadMode,
}

impl Default for PadConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 128,
            learning_rate: 0.01,
            train_fraction: 0.8,
            mode: PadMode::Pooled,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PadResult {
    pub pad: f64,
    /// Balanced held-out error of the domain classifier.
    pub error: f64,
    pub n_source: usize,
    pub n_target: usize,
}

fn split(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_train = ((n as f64) * fraction).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::invalid(format!(
            "degenerate domain split: {n_train} of {n} rows for training"
        )));
    }
    let test = idx.split_off(n_train);
    Ok((idx, test))
}

/// Balanced error of a linear domain classifier on `[n, d]` rows.
fn domain_error(
    xs: &[f64],
    ns: usize,
    xt: &[f64],
    nt: usize,
    d: usize,
    config: &PadConfig,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (s_train, s_test) = split(ns, config.train_fraction, &mut rng)?;
    let (t_train, t_test) = split(nt, config.train_fraction, &mut rng)?;

    // Standardize with training statistics.
    let rows_train: Vec<&[f64]> = s_train
        .iter()
        .map(|&i| &xs[i * d..(i + 1) * d])
        .chain(t_train.iter().map(|&i| &xt[i * d..(i + 1) * d]))
        .collect();
    let n = rows_train.len() as f64;
    let mut mean = vec![0.0; d];
    let mut sd = vec![0.0; d];
    for r in &rows_train {
        mean.iter_mut().zip(*r).for_each(|(m, v)| *m += v / n);
    }
    for r in &rows_train {
        sd.iter_mut()
            .zip(*r)
            .zip(&mean)
            .for_each(|((s, v), m)| *s += (v - m).powi(2) / n);
    }
    sd.iter_mut().for_each(|s| *s = s.sqrt().max(1e-8));
    let standardize = |rows: &mut dyn Iterator<Item = &[f64]>| -> Vec<f64> {
        rows.flat_map(|r| {
            r.iter()
                .zip(&mean)
                .zip(&sd)
                .map(|((v, m), s)| (v - m) / s)
                .collect::<Vec<_>>()
        })
        .collect()
    };
    let x_train = standardize(&mut rows_train.iter().copied());
    let labels: Vec<bool> = s_train
        .iter()
        .map(|_| false)
        .chain(t_train.iter().map(|_| true))
        .collect();
    // Each domain carries half of the total weight.
    let (a, b) = (s_train.len() as f64, t_train.len() as f64);
    let weights: Vec<f64> = labels
        .iter()
        .map(|&y| if y { n / (2.0 * b) } else { n / (2.0 * a) })
        .collect();

    let mut net = Network::build(vec![LayerSpec::dense(1), LayerSpec::Sigmoid], &[d], seed)?;
    let tc = TrainConfig {
        epochs: config.epochs,
        batch_size: config.batch_size,
        learning_rate: config.learning_rate,
    };
    let features = Tensor::new(vec![labels.len(), d], x_train)?;
    fit_binary(
        &mut net,
        &features,
        &labels,
        Some(&weights),
        &tc,
        seed.wrapping_add(1),
    )?;

    let score = |rows: &[usize], x: &[f64], is_target: bool| -> Result<f64> {
        let data = standardize(&mut rows.iter().map(|&i| &x[i * d..(i + 1) * d]));
        let p = predict_proba(&net, &Tensor::new(vec![rows.len(), d], data)?)?;
        let wrong = p.iter().filter(|&&v| (v >= 0.5) != is_target).count();
        Ok(wrong as f64 / rows.len() as f64)
    };
    Ok(0.5 * (score(&s_test, xs, false)? + score(&t_test, xt, true)?))
}

/// Proxy A-distance `2(1 − 2ε)`, clipped to `[0, 2]`, between the rows of two
/// feature tensors (flattened per row).
pub fn proxy_a_distance(
    xs: &Tensor,
    xt: &Tensor,
    config: &PadConfig,
    seed: u64,
) -> Result<PadResult> {
    let d = xs.sample_len();
    if xt.sample_len() != d {
        return Err(Error::shape(format!(
            "source rows have {d} features, target rows {}",
            xt.sample_len()
        )));
    }
    let (ns, nt) = (xs.batch(), xt.batch());
    if ns == 0 || nt == 0 || d == 0 {
        return Err(Error::invalid("PAD needs nonempty cohorts"));
    }
    let error = match config.mode {
        PadMode::Pooled => domain_error(xs.data(), ns, xt.data(), nt, d, config, seed)?,
        PadMode::PerSlice => {
            let mut total = 0.0;
            for j in 0..d {
                let col =
                    |x: &Tensor| -> Vec<f64> { (0..x.batch()).map(|i| x.sample(i)[j]).collect() };
                let seed_j = seed.wrapping_add(1000 * (j as u64 + 1));
                let pad_j = 2.0
                    * (1.0 - 2.0 * domain_error(&col(xs), ns, &col(xt), nt, 1, config, seed_j)?);
                total += pad_j.clamp(0.0, 2.0);
            }
            let mean_pad = total / d as f64;
            // Report the error consistent with the averaged distance.
            (1.0 - mean_pad / 2.0) / 2.0
        }
    };
    // A worse-than-chance classifier carries no more information than chance.
    let error = error.clamp(0.0, 0.5);
    Ok(PadResult {
        pad: (2.0 * (1.0 - 2.0 * error)).clamp(0.0, 2.0),
        error,
        n_source: ns,
        n_target: nt,
    })
}
