use std::io::Write;

use serde::{Deserialize, Serialize};

use super::eigen::symmetric_eigen;
use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `n_components x dim`, row-major, rows orthonormal.
    pub components: Vec<f64>,
    pub explained_variance: Vec<f64>,
    /// Every eigenvalue of the covariance, descending.
    pub spectrum: Vec<f64>,
}

/// Column means and the sample covariance (divisor n-1) of an `n x d` matrix.
pub fn covariance(data: &[f64], n: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; d];
    for row in data.chunks_exact(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; d * d];
    let mut centered = vec![0.0; d];
    for row in data.chunks_exact(d) {
        for j in 0..d {
            centered[j] = row[j] - mean[j];
        }
        for i in 0..d {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            for j in i..d {
                cov[i * d + j] += ci * centered[j];
            }
        }
    }
    let div = (n.max(2) - 1) as f64;
    for i in 0..d {
        for j in i..d {
            cov[i * d + j] /= div;
            cov[j * d + i] = cov[i * d + j];
        }
    }
    (mean, cov)
}

/// Principal components of the rows of `data` (shape `[n, ...]`, flattened
/// per sample). The largest-magnitude coordinate of every component is made
/// positive.
pub fn fit_pca(data: &Tensor, n_components: usize) -> Result<PcaModel> {
    let n = data.batch();
    let d = data.sample_len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "PCA needs at least 2 rows, got {n}"
        )));
    }
    if n_components == 0 || n_components > n.min(d) {
        return Err(Error::invalid(format!(
            "{n_components} components requested from {n} rows of dimension {d}"
        )));
    }
    if !data.all_finite() {
        return Err(Error::NonFinite("PCA input".into()));
    }
    let (mean, cov) = covariance(data.data(), n, d);
    let (values, vectors) = symmetric_eigen(&cov, d)?;
    let mut components = vectors[..n_components * d].to_vec();
    for row in components.chunks_exact_mut(d) {
        let lead = row
            .iter()
            .copied()
            .fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
        if lead < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
    }
    let spectrum: Vec<f64> = values.iter().map(|v| v.max(0.0)).collect();
    Ok(PcaModel {
        mean,
        explained_variance: spectrum[..n_components].to_vec(),
        components,
        spectrum,
    })
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.explained_variance.len()
    }

    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        let total: f64 = self.spectrum.iter().sum();
        self.explained_variance
            .iter()
            .map(|v| if total > 0.0 { v / total } else { 0.0 })
            .collect()
    }

    /// Number of covariance eigenvalues above a relative tolerance.
    pub fn rank(&self) -> usize {
        let top = self.spectrum.first().copied().unwrap_or(0.0);
        if top <= 0.0 {
            return 0;
        }
        self.spectrum.iter().filter(|&&v| v > 1e-10 * top).count()
    }

    fn project_row(&self, row: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for (c, o) in out.iter_mut().enumerate() {
            let comp = &self.components[c * d..(c + 1) * d];
            *o = row
                .iter()
                .zip(&self.mean)
                .zip(comp)
                .map(|((x, m), w)| (x - m) * w)
                .sum();
        }
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    /// Maps projected rows back to the input space.
    pub fn inverse_transform(&self, projected: &Tensor) -> Result<Tensor> {
        let (d, c) = (self.dim(), self.n_components());
        if projected.sample_len() != c {
            return Err(Error::shape(format!(
                "{} columns for a {c}-component model",
                projected.sample_len()
            )));
        }
        let mut out = Vec::with_capacity(projected.batch() * d);
        for row in projected.data().chunks_exact(c) {
            for j in 0..d {
                out.push(
                    self.mean[j]
                        + (0..c)
                            .map(|k| row[k] * self.components[k * d + j])
                            .sum::<f64>(),
                );
            }
        }
        Tensor::new(vec![projected.batch(), d], out)
    }
}

/// `(data - mean) * componentsᵀ`, one output row per input row.
pub fn pca_transform(model: &PcaModel, data: &Tensor) -> Result<Tensor> {
    let d = model.dim();
    if data.sample_len() != d {
        return Err(Error::shape(format!(
            "{} columns for a model fit on {d}",
            data.sample_len()
        )));
    }
    let c = model.n_components();
    let n = data.batch();
    let mut out = vec![0.0; n * c];
    if d > 0 {
        for (row, o) in data.data().chunks_exact(d).zip(out.chunks_exact_mut(c)) {
            model.project_row(row, o);
        }
    }
    Tensor::new(vec![n, c], out)
}
