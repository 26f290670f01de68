use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{Cohort, EventVocabulary, ObservedCohort};
use crate::error::{Error, Result};
use crate::repr::{fit_nn_pca, orthonormal_rows, AeKind, NnPcaConfig, NnPcaModel};
use crate::transfer::{target_population, train_active_model, MethodConfig};

/// Relative importance of each raw event type inside a linear embedding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureWeights {
    pub names: Vec<String>,
    pub video: Vec<bool>,
    /// Column norms of the projection, normalized to sum to one.
    pub weights: Vec<f64>,
    /// Type indices by decreasing weight.
    pub ranking: Vec<usize>,
}

/// Euclidean norm of every column of an `n_components x E` projection.
pub fn embedding_feature_weights(
    projection: &[f64],
    n_components: usize,
    vocabulary: &EventVocabulary,
) -> Result<FeatureWeights> {
    let e = vocabulary.len();
    if projection.len() != n_components * e {
        return Err(Error::shape(format!(
            "{} projection entries for {n_components} x {e}",
            projection.len()
        )));
    }
    let norms: Vec<f64> = (0..e)
        .map(|j| {
            (0..n_components)
                .map(|c| projection[c * e + j].powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let total: f64 = norms.iter().sum();
    let weights: Vec<f64> = norms
        .iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();
    let mut ranking: Vec<usize> = (0..e).collect();
    ranking.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    Ok(FeatureWeights {
        names: vocabulary.names().to_vec(),
        video: vocabulary.video_flags().to_vec(),
        weights,
        ranking,
    })
}

/// NN-PCA on every (student, week) row of the cohort's normalized features,
/// then [`embedding_feature_weights`] of its projection.
pub fn cohort_feature_weights(
    cohort: &Cohort,
    n_components: usize,
    config: &NnPcaConfig,
    seed: u64,
) -> Result<(NnPcaModel, FeatureWeights)> {
    let rows: Vec<usize> = (0..cohort.len()).collect();
    let x = cohort.features(&rows, 1..=cohort.weeks());
    let e = cohort.vocabulary().len();
    let x = x.reshape(vec![cohort.len() * cohort.weeks(), e])?;
    let model = fit_nn_pca(&x, n_components, config, seed)?;
    let w = subspace_weights(&model.projection(), n_components, cohort.vocabulary())?;
    Ok((model, w))
}

/// Active transfer with a linear autoencoder in place of the LSTM one; the
/// weights come from its encoder matrix.
pub fn active_feature_weights(
    source: &Cohort,
    target: &ObservedCohort,
    config: &MethodConfig,
    seed: u64,
) -> Result<FeatureWeights> {
    let s = source.slice_for_week(target.week(), config.at_risk_only)?;
    let (_, xt) = target_population(target, config.at_risk_only)?;
    let mut active = config.active.clone();
    active.ae_kind = AeKind::Linear;
    let bottleneck = config.autoencoder.bottleneck;
    let (ae, _, _) = train_active_model(&s.features, &s.labels, &xt, &active, bottleneck, seed)?;
    let projection = ae.linear_projection().expect("linear autoencoder");
    subspace_weights(&projection, bottleneck, source.vocabulary())
}

/// Weights of the orthonormal transformation onto the row space of a
/// learned encoder matrix. A trained linear encoder is only determined up
/// to an invertible mix of its rows; the orthonormal basis is not.
pub fn subspace_weights(
    encoder: &[f64],
    rows: usize,
    vocabulary: &EventVocabulary,
) -> Result<FeatureWeights> {
    let e = vocabulary.len();
    if encoder.len() != rows * e {
        return Err(Error::shape(format!(
            "{} encoder entries for {rows} x {e}",
            encoder.len()
        )));
    }
    let basis = orthonormal_rows(encoder, rows, e);
    embedding_feature_weights(&basis.concat(), basis.len(), vocabulary)
}

impl FeatureWeights {
    /// Element-wise mean of several weight vectors over the same vocabulary.
    pub fn average(all: &[FeatureWeights]) -> Result<FeatureWeights> {
        let first = all
            .first()
            .ok_or_else(|| Error::invalid("no weights to average"))?;
        let e = first.weights.len();
        let mut weights = vec![0.0; e];
        for w in all {
            if w.names != first.names {
                return Err(Error::invalid("weights over different vocabularies"));
            }
            weights
                .iter_mut()
                .zip(&w.weights)
                .for_each(|(a, b)| *a += b / all.len() as f64);
        }
        let mut ranking: Vec<usize> = (0..e).collect();
        ranking.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
        Ok(FeatureWeights {
            names: first.names.clone(),
            video: first.video.clone(),
            weights,
            ranking,
        })
    }

    /// True when every video type outranks every non-video type.
    pub fn video_first(&self) -> bool {
        let n_video = self.video.iter().filter(|&&v| v).count();
        self.ranking[..n_video].iter().all(|&i| self.video[i])
    }

    /// Rows `rank,event_type,video,weight`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["rank", "event_type", "video", "weight"])?;
        for (r, &i) in self.ranking.iter().enumerate() {
            w.write_record([
                (r + 1).to_string(),
                self.names[i].clone(),
                self.video[i].to_string(),
                format!("{}", self.weights[i]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
