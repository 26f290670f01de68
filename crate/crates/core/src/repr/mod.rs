//! PCA, linear and LSTM autoencoders, and transductive PCA alignment.

mod autoencoder;
mod eigen;
mod nnpca;
mod pca;
mod tpca;

pub(crate) use autoencoder::balanced_order;
pub use autoencoder::{
    encode, train_autoencoder, AeConfig, AeKind, AutoencoderModel, EmbeddingSet,
};
pub use eigen::symmetric_eigen;
pub use nnpca::{fit_nn_pca, orthonormal_rows, principal_angles, NnPcaConfig, NnPcaModel};
pub use pca::{covariance, fit_pca, pca_transform, PcaModel};
pub use tpca::{fit_tpca_and_align, Aligned, TpcaModel};
