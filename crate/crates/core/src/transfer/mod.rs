//! Transfer methods and baselines for per-week dropout predictors.

mod coral;
mod kmm;
mod methods;
mod predictor;

pub use coral::{coral_loss, covariance_distance, CoralOutput};
pub use kmm::{kmm_weights, median_bandwidth, InstanceWeights, KmmConfig};
pub use methods::sub_seed;
pub use methods::{
    target_population, train_active, train_active_model, train_in_situ, train_instance,
    train_naive, train_no_transfer, train_passive, train_test_split, train_transfer, ActiveConfig,
    ActiveLosses, MethodConfig, NoTransferFit,
};
pub use predictor::{Head, Method, Representation, WeeklyPredictor, BUNDLE_FORMAT_VERSION};
