use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::loss::bce_loss;
use super::network::Network;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 128,
            learning_rate: 0.001,
        }
    }
}

/// Shuffled mini-batches over `0..n`; the last partial batch is kept.
pub fn shuffled_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}

/// Fits a network ending in a single sigmoid unit with (optionally weighted)
/// binary cross-entropy. Returns the mean training loss per epoch.
pub fn fit_binary(
    net: &mut Network,
    features: &Tensor,
    labels: &[bool],
    weights: Option<&[f64]>,
    config: &TrainConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = features.batch();
    if n != labels.len() {
        return Err(Error::shape(format!(
            "{n} samples for {} labels",
            labels.len()
        )));
    }
    if net.output_shape() != [1] {
        return Err(Error::shape(format!(
            "binary fit needs a single output, network emits {:?}",
            net.output_shape()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = AdamState::new(net.num_params(), config.learning_rate);
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut total = 0.0;
        let mut seen = 0.0;
        for batch in shuffled_batches(n, config.batch_size, &mut rng) {
            let y: Vec<bool> = batch.iter().map(|&i| labels[i]).collect();
            let w: Option<Vec<f64>> = weights.map(|w| batch.iter().map(|&i| w[i]).collect());
            if let Some(w) = &w {
                if w.iter().sum::<f64>() <= 0.0 {
                    continue;
                }
            }
            let x = features.select(&batch);
            let p = net.forward(&x)?;
            let (loss, g) = bce_loss(p.data(), &y, w.as_deref())?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("cross-entropy is {loss}"),
                });
            }
            let grads = net.backward(&Tensor::new(vec![batch.len(), 1], g)?)?;
            adam.update(net.params_mut(), &grads.params)?;
            total += loss * batch.len() as f64;
            seen += batch.len() as f64;
        }
        trace.push(if seen > 0.0 { total / seen } else { 0.0 });
    }
    Ok(trace)
}

/// Scores in `[0, 1]` for every sample.
pub fn predict_proba(net: &Network, features: &Tensor) -> Result<Vec<f64>> {
    Ok(net.infer(features)?.into_data())
}
