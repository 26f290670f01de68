use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const PROB_CLAMP: f64 = 1e-7;

/// Weighted mean binary cross-entropy and its gradient with respect to the
/// predicted probabilities. Weights are normalized by their sum.
pub fn bce_loss(
    predictions: &[f64],
    labels: &[bool],
    sample_weights: Option<&[f64]>,
) -> Result<(f64, Vec<f64>)> {
    if predictions.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if let Some(w) = sample_weights {
        if w.len() != labels.len() {
            return Err(Error::shape(format!(
                "{} weights for {} labels",
                w.len(),
                labels.len()
            )));
        }
        if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid(
                "sample weights must be finite and nonnegative",
            ));
        }
    }
    let weight = |i: usize| sample_weights.map_or(1.0, |w| w[i]);
    let total: f64 = (0..labels.len()).map(weight).sum();
    if labels.is_empty() || total <= 0.0 {
        return Err(Error::invalid(
            "binary cross-entropy over zero total weight",
        ));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; labels.len()];
    for (i, (&p, &y)) in predictions.iter().zip(labels).enumerate() {
        let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let w = weight(i) / total;
        if y {
            loss -= w * p.ln();
            grad[i] = -w / p;
        } else {
            loss -= w * (1.0 - p).ln();
            grad[i] = w / (1.0 - p);
        }
    }
    Ok((loss, grad))
}

/// Mean squared error over all elements and its gradient `2(o - t)/N`.
pub fn mse_loss(output: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if output.shape() != target.shape() {
        return Err(Error::shape(format!(
            "mse between {:?} and {:?}",
            output.shape(),
            target.shape()
        )));
    }
    let n = output.len().max(1) as f64;
    let mut loss = 0.0;
    let grad: Vec<f64> = output
        .data()
        .iter()
        .zip(target.data())
        .map(|(&o, &t)| {
            let d = o - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, Tensor::new(output.shape().to_vec(), grad)?))
}
