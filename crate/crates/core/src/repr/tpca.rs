use serde::{Deserialize, Serialize};

use super::autoencoder::EmbeddingSet;
use super::pca::{fit_pca, pca_transform, PcaModel};
use crate::error::{Error, Result};

/// PCA fit on target embedding vectors pooled over time units and applied
/// unit by unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TpcaModel {
    pub pca: PcaModel,
}

impl TpcaModel {
    pub fn n_out(&self) -> usize {
        self.pca.n_components()
    }

    pub fn fit(target: &EmbeddingSet, n_out: usize) -> Result<Self> {
        let dim = target.dim();
        if n_out == 0 || n_out >= dim {
            return Err(Error::invalid(format!(
                "T-PCA output {n_out} must lie in 1..{dim}"
            )));
        }
        // The CNN head predicts one label, so it needs more than one input.
        if n_out * target.units() <= 1 {
            return Err(Error::invalid(
                "T-PCA output must exceed the single predicted label",
            ));
        }
        let pooled = target.pooled();
        if pooled.batch() < 2 {
            return Err(Error::RankDeficient {
                rank: 0,
                required: n_out,
            });
        }
        let pca = fit_pca(&pooled, n_out.min(pooled.batch()))?;
        let rank = pca.rank();
        if rank < n_out {
            return Err(Error::RankDeficient {
                rank,
                required: n_out,
            });
        }
        Ok(Self { pca })
    }

    pub fn apply(&self, embedding: &EmbeddingSet) -> Result<EmbeddingSet> {
        let (n, units) = (embedding.len(), embedding.units());
        let out = pca_transform(&self.pca, &embedding.pooled())?;
        EmbeddingSet::new(out.reshape(vec![n, units, self.n_out()])?)
    }
}

/// Output of [`fit_tpca_and_align`].
#[derive(Clone, Debug)]
pub struct Aligned {
    pub model: TpcaModel,
    pub source: EmbeddingSet,
    pub target: EmbeddingSet,
}

pub fn fit_tpca_and_align(
    target: &EmbeddingSet,
    source: &EmbeddingSet,
    n_out_per_unit: usize,
) -> Result<Aligned> {
    if target.dim() != source.dim() || target.units() != source.units() {
        return Err(Error::shape(format!(
            "source embedding [{}, {}] differs from target [{}, {}]",
            source.units(),
            source.dim(),
            target.units(),
            target.dim()
        )));
    }
    let model = TpcaModel::fit(target, n_out_per_unit)?;
    Ok(Aligned {
        source: model.apply(source)?,
        target: model.apply(target)?,
        model,
    })
}
