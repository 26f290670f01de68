//! AUC, Proxy A-distance, MDS, embedding feature weights and summaries.

mod auc;
mod mds;
mod pad;
mod summary;
mod weights;

pub use auc::auc;
pub use mds::mds_embed;
pub use pad::{proxy_a_distance, PadConfig, PadMode, PadResult};
pub use summary::{
    read_results, summarize, winner, write_dropout_table, write_frequency_table, write_results,
    MethodRow, PairRow, ScatterRow, Stat, Summary, TransferResult, WeekRow, RESULTS_HEADER,
};
pub use weights::{
    active_feature_weights, cohort_feature_weights, embedding_feature_weights, subspace_weights,
    FeatureWeights,
};
