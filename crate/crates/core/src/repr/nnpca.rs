use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eigen::symmetric_eigen;
use super::pca::covariance;
use crate::error::{Error, Result};
use crate::nn::{mse_loss, shuffled_batches, AdamState, LayerSpec, Network, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NnPcaConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for NnPcaConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 128,
            learning_rate: 0.01,
        }
    }
}

/// Linear autoencoder `x -> W_e (x - mean) -> W_d z + mean`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NnPcaModel {
    pub mean: Vec<f64>,
    pub encoder: Network,
    pub decoder: Network,
    pub trace: Vec<f64>,
}

impl NnPcaModel {
    pub fn n_components(&self) -> usize {
        self.encoder.output_shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Encoder weight matrix, `n_components x dim` row-major.
    pub fn projection(&self) -> Vec<f64> {
        let (c, d) = (self.n_components(), self.dim());
        self.encoder.layer_params(0)[..c * d].to_vec()
    }

    fn centered(&self, data: &Tensor) -> Result<Tensor> {
        let d = self.dim();
        if data.sample_len() != d {
            return Err(Error::shape(format!(
                "{} columns for dimension {d}",
                data.sample_len()
            )));
        }
        center(data, &self.mean)
    }

    pub fn transform(&self, data: &Tensor) -> Result<Tensor> {
        self.encoder.infer(&self.centered(data)?)
    }

    pub fn reconstruct(&self, data: &Tensor) -> Result<Tensor> {
        let r = self.decoder.infer(&self.transform(data)?)?;
        let d = self.dim();
        let mut out = r.into_data();
        for row in out.chunks_exact_mut(d) {
            for (v, m) in row.iter_mut().zip(&self.mean) {
                *v += m;
            }
        }
        Tensor::new(vec![data.batch(), d], out)
    }
}

fn center(data: &Tensor, mean: &[f64]) -> Result<Tensor> {
    let d = mean.len();
    let mut out = data.data().to_vec();
    for row in out.chunks_exact_mut(d) {
        for (v, m) in row.iter_mut().zip(mean) {
            *v -= m;
        }
    }
    Tensor::new(vec![data.batch(), d], out)
}

pub fn fit_nn_pca(
    data: &Tensor,
    n_components: usize,
    config: &NnPcaConfig,
    seed: u64,
) -> Result<NnPcaModel> {
    let n = data.batch();
    let d = data.sample_len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "NN-PCA needs at least 2 rows, got {n}"
        )));
    }
    if n_components == 0 || n_components > n.min(d) {
        return Err(Error::invalid(format!(
            "{n_components} components requested from {n} rows of dimension {d}"
        )));
    }
    let (mean, _) = covariance(data.data(), n, d);
    let x = center(data, &mean)?;
    let mut encoder = Network::build(vec![LayerSpec::dense(n_components)], &[d], seed)?;
    let mut decoder = Network::build(
        vec![LayerSpec::dense(d)],
        &[n_components],
        seed.wrapping_add(1),
    )?;
    let mut adam_e = AdamState::new(encoder.num_params(), config.learning_rate);
    let mut adam_d = AdamState::new(decoder.num_params(), config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut total = 0.0;
        for batch in shuffled_batches(n, config.batch_size, &mut rng) {
            let xb = x.select(&batch);
            let z = encoder.forward(&xb)?;
            let r = decoder.forward(&z)?;
            let (loss, g) = mse_loss(&r, &xb)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("reconstruction loss is {loss}"),
                });
            }
            let gd = decoder.backward(&g)?;
            let ge = encoder.backward(&gd.input)?;
            adam_d.update(decoder.params_mut(), &gd.params)?;
            adam_e.update(encoder.params_mut(), &ge.params)?;
            total += loss * batch.len() as f64;
        }
        trace.push(total / n as f64);
    }
    Ok(NnPcaModel {
        mean,
        encoder,
        decoder,
        trace,
    })
}

/// Orthonormal basis (Gram-Schmidt) for the row space of a `rows x dim`
/// matrix; near-dependent rows are dropped.
pub fn orthonormal_rows(m: &[f64], rows: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for r in 0..rows {
        let mut v = m[r * dim..(r + 1) * dim].to_vec();
        for _ in 0..2 {
            for b in &basis {
                let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    basis
}

/// Principal angles in degrees between the row spaces of two matrices with
/// the same number of columns, largest first.
pub fn principal_angles(
    a: &[f64],
    a_rows: usize,
    b: &[f64],
    b_rows: usize,
    dim: usize,
) -> Result<Vec<f64>> {
    let qa = orthonormal_rows(a, a_rows, dim);
    let qb = orthonormal_rows(b, b_rows, dim);
    let (p, q) = (qa.len(), qb.len());
    if p == 0 || q == 0 {
        return Err(Error::invalid("empty subspace"));
    }
    // Singular values of Qa Qbᵀ via the eigenvalues of (Qa Qbᵀ)ᵀ(Qa Qbᵀ).
    let m: Vec<f64> = (0..p)
        .flat_map(|i| (0..q).map(move |j| (i, j)))
        .map(|(i, j)| qa[i].iter().zip(&qb[j]).map(|(x, y)| x * y).sum())
        .collect();
    let mut g = vec![0.0; q * q];
    for i in 0..q {
        for j in 0..q {
            g[i * q + j] = (0..p).map(|k| m[k * q + i] * m[k * q + j]).sum();
        }
    }
    let (vals, _) = symmetric_eigen(&g, q)?;
    let k = p.min(q);
    let mut angles: Vec<f64> = vals[..k]
        .iter()
        .map(|v| v.clamp(0.0, 1.0).sqrt().acos().to_degrees())
        .collect();
    angles.sort_by(|x, y| y.total_cmp(x));
    Ok(angles)
}
