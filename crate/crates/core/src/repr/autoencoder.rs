use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{mse_loss, presets, AdamState, LayerSpec, Network, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AeKind {
    /// Conv/BiLSTM encoder and decoder.
    #[default]
    Lstm,
    /// A single per-unit linear map each way (PCA as a network).
    Linear,
}

impl AeKind {
    pub fn encoder_specs(self, bottleneck: usize) -> Vec<LayerSpec> {
        match self {
            AeKind::Lstm => presets::lstm_encoder(bottleneck),
            AeKind::Linear => vec![LayerSpec::conv1d(bottleneck, 1), LayerSpec::Flatten],
        }
    }

    pub fn decoder_specs(self, time: usize, bottleneck: usize, channels: usize) -> Vec<LayerSpec> {
        match self {
            AeKind::Lstm => presets::lstm_decoder(time, bottleneck, channels),
            AeKind::Linear => vec![
                LayerSpec::reshape(vec![time, bottleneck]),
                LayerSpec::conv1d(channels, 1),
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub bottleneck: usize,
    #[serde(default)]
    pub kind: AeKind,
}

impl Default for AeConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 128,
            learning_rate: 0.001,
            bottleneck: 8,
            kind: AeKind::Lstm,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AutoencoderModel {
    #[serde(default)]
    pub kind: AeKind,
    pub encoder: Network,
    pub decoder: Network,
    pub bottleneck: usize,
    pub time: usize,
    pub channels: usize,
}

impl AutoencoderModel {
    pub fn new(
        kind: AeKind,
        time: usize,
        channels: usize,
        bottleneck: usize,
        seed: u64,
    ) -> Result<Self> {
        let encoder = Network::build(kind.encoder_specs(bottleneck), &[time, channels], seed)?;
        let decoder = Network::build(
            kind.decoder_specs(time, bottleneck, channels),
            &[time * bottleneck],
            seed.wrapping_add(1),
        )?;
        Ok(Self {
            kind,
            encoder,
            decoder,
            bottleneck,
            time,
            channels,
        })
    }

    pub fn restore(self) -> Result<Self> {
        Ok(Self {
            encoder: self.encoder.restore()?,
            decoder: self.decoder.restore()?,
            ..self
        })
    }

    /// Encoder matrix `bottleneck x channels` (row-major) of a linear model.
    pub fn linear_projection(&self) -> Option<Vec<f64>> {
        (self.kind == AeKind::Linear)
            .then(|| self.encoder.layer_params(0)[..self.bottleneck * self.channels].to_vec())
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.sample_shape() != [self.time, self.channels] {
            return Err(Error::shape(format!(
                "autoencoder expects [{}, {}] per sample, got {:?}",
                self.time,
                self.channels,
                x.sample_shape()
            )));
        }
        Ok(())
    }

    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        self.decoder.infer(&self.encoder.infer(x)?)
    }

    /// Mean squared reconstruction error over `x`.
    pub fn reconstruction_error(&self, x: &Tensor) -> Result<f64> {
        Ok(mse_loss(&self.reconstruct(x)?, x)?.0)
    }
}

/// Per-student embeddings laid out `[n, units, dim]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    data: Tensor,
}

impl EmbeddingSet {
    pub fn new(data: Tensor) -> Result<Self> {
        if data.shape().len() != 3 {
            return Err(Error::shape(format!(
                "embedding needs [n, units, dim], got {:?}",
                data.shape()
            )));
        }
        if !data.all_finite() {
            return Err(Error::NonFinite("embedding".into()));
        }
        Ok(Self { data })
    }

    pub fn len(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn units(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor {
        self.data
    }

    /// `[n, units * dim]`.
    pub fn flat(&self) -> Tensor {
        self.data
            .clone()
            .reshape(vec![self.len(), self.units() * self.dim()])
            .expect("same length")
    }

    /// `[n * units, dim]`: one row per (student, unit).
    pub fn pooled(&self) -> Tensor {
        self.data
            .clone()
            .reshape(vec![self.len() * self.units(), self.dim()])
            .expect("same length")
    }

    /// Rows `student_id,unit,dim,value` with 1-based units.
    pub fn write_csv<W: Write>(&self, out: W, student_ids: &[String]) -> Result<()> {
        if student_ids.len() != self.len() {
            return Err(Error::shape(format!(
                "{} ids for {} embeddings",
                student_ids.len(),
                self.len()
            )));
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["student_id", "unit", "dim", "value"])?;
        let (u, d) = (self.units(), self.dim());
        for (i, id) in student_ids.iter().enumerate() {
            let row = self.data.sample(i);
            for t in 0..u {
                for j in 0..d {
                    w.write_record([
                        id.clone(),
                        (t + 1).to_string(),
                        j.to_string(),
                        format!("{}", row[t * d + j]),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Epoch order that visits every part equally often: each part is cycled
/// (reshuffled per pass) up to the size of the largest part.
pub(crate) fn balanced_order(sizes: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let m = sizes.iter().copied().max().unwrap_or(0);
    let mut order = Vec::with_capacity(m * sizes.len());
    let mut offset = 0;
    for &n in sizes {
        if n > 0 {
            let mut taken = 0;
            while taken < m {
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(rng);
                for &p in perm.iter().take(m - taken) {
                    order.push(offset + p);
                }
                taken += n.min(m - taken);
            }
        }
        offset += n;
    }
    order.shuffle(rng);
    order
}

/// Trains an autoencoder on the union of `parts`, oversampling smaller parts
/// to equal weight. Returns the model and the mean loss per epoch.
pub fn train_autoencoder(
    parts: &[&Tensor],
    config: &AeConfig,
    seed: u64,
) -> Result<(AutoencoderModel, Vec<f64>)> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("no training data"))?;
    let shape = first.sample_shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::shape(format!(
            "expected [n, weeks, types], got {:?}",
            first.shape()
        )));
    }
    let all = Tensor::concat(parts)?;
    if all.batch() == 0 {
        return Err(Error::invalid("no training data"));
    }
    let mut model =
        AutoencoderModel::new(config.kind, shape[0], shape[1], config.bottleneck, seed)?;
    let sizes: Vec<usize> = parts.iter().map(|p| p.batch()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_edae);
    let mut adam_e = AdamState::new(model.encoder.num_params(), config.learning_rate);
    let mut adam_d = AdamState::new(model.decoder.num_params(), config.learning_rate);
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let order = balanced_order(&sizes, &mut rng);
        let (mut total, mut seen) = (0.0, 0usize);
        for batch in order.chunks(config.batch_size.max(1)) {
            let x = all.select(batch);
            let z = model.encoder.forward(&x)?;
            let r = model.decoder.forward(&z)?;
            let (loss, g) = mse_loss(&r, &x)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("reconstruction loss is {loss}"),
                });
            }
            let gd = model.decoder.backward(&g)?;
            let ge = model.encoder.backward(&gd.input)?;
            adam_d.update(model.decoder.params_mut(), &gd.params)?;
            adam_e.update(model.encoder.params_mut(), &ge.params)?;
            total += loss * batch.len() as f64;
            seen += batch.len();
        }
        trace.push(total / seen.max(1) as f64);
    }
    Ok((model, trace))
}

/// Encoder output per student, `[n, weeks, bottleneck]`.
pub fn encode(model: &AutoencoderModel, features: &Tensor) -> Result<EmbeddingSet> {
    if features.batch() == 0 && features.sample_shape() == [model.time, model.channels] {
        return EmbeddingSet::new(Tensor::zeros(vec![0, model.time, model.bottleneck]));
    }
    model.check(features)?;
    let z = model.encoder.infer(features)?;
    EmbeddingSet::new(z.reshape(vec![features.batch(), model.time, model.bottleneck])?)
}
