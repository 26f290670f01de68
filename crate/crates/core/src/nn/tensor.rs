use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
///
/// Batched tensors put the sample index on the leading axis; sequence data is
/// laid out as `[batch, time, channels]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the leading (batch) axis.
    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Shape of one sample (everything after the batch axis).
    pub fn sample_shape(&self) -> &[usize] {
        if self.shape.is_empty() {
            &[]
        } else {
            &self.shape[1..]
        }
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape().iter().product()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let n = self.sample_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Gathers the given samples (by batch index) into a new tensor.
    pub fn select(&self, rows: &[usize]) -> Tensor {
        let n = self.sample_len();
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            data.extend_from_slice(self.sample(r));
        }
        let mut shape = self.shape.clone();
        if shape.is_empty() {
            shape.push(rows.len());
        } else {
            shape[0] = rows.len();
        }
        Tensor { shape, data }
    }

    /// Concatenates along the batch axis.
    pub fn concat(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat of zero tensors"))?;
        let sample = first.sample_shape().to_vec();
        let mut data = Vec::new();
        let mut batch = 0;
        for p in parts {
            if p.sample_shape() != sample.as_slice() {
                return Err(Error::shape(format!(
                    "concat sample shapes {:?} vs {:?}",
                    p.sample_shape(),
                    sample
                )));
            }
            batch += p.batch();
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![batch];
        shape.extend(sample);
        Ok(Tensor { shape, data })
    }

    /// Splits along the batch axis at `at`.
    pub fn split_at(&self, at: usize) -> (Tensor, Tensor) {
        let n = self.sample_len();
        let (a, b) = self.data.split_at(at * n);
        let mut sa = self.shape.clone();
        let mut sb = self.shape.clone();
        sa[0] = at;
        sb[0] = self.batch() - at;
        (
            Tensor {
                shape: sa,
                data: a.to_vec(),
            },
            Tensor {
                shape: sb,
                data: b.to_vec(),
            },
        )
    }

    /// Keeps time steps `[start, end)` of a `[batch, time, channels]` tensor.
    pub fn time_window(&self, start: usize, end: usize) -> Result<Tensor> {
        if self.shape.len() != 3 || start > end || end > self.shape[1] {
            return Err(Error::shape(format!(
                "time window [{start}, {end}) on {:?}",
                self.shape
            )));
        }
        let (b, t, c) = (self.shape[0], self.shape[1], self.shape[2]);
        let mut data = Vec::with_capacity(b * (end - start) * c);
        for i in 0..b {
            let base = i * t * c;
            data.extend_from_slice(&self.data[base + start * c..base + end * c]);
        }
        Ok(Tensor {
            shape: vec![b, end - start, c],
            data,
        })
    }
}
