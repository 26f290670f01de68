//! Small reverse-mode neural network kernels: fixed layer chains with
//! hand-written backward passes, binary cross-entropy / MSE losses and Adam.

mod adam;
mod layer;
mod loss;
mod lstm;
mod network;
pub mod presets;
mod tensor;
mod train;

pub use adam::AdamState;
pub use layer::LayerSpec;
pub use loss::{bce_loss, mse_loss, PROB_CLAMP};
pub use network::{Gradients, Network};
pub use tensor::Tensor;
pub use train::{fit_binary, predict_proba, shuffled_batches, TrainConfig};
