//! Learned constraint surrogate.
//!
//! A deep ensemble of small tanh MLPs maps a 113-dimensional (state, plan)
//! feature vector to a scalar constraint score. The ensemble mean and spread
//! give a Gaussian predictive distribution whose CDF at the feasibility
//! threshold is the probability that the candidate plan satisfies the
//! constraint.

mod cdf;
mod ensemble;
mod features;
pub mod mlp;
mod standardizer;
mod train;

pub use cdf::normal_cdf;
pub use ensemble::{
    LabelConvention, SurrogateEnsemble, SurrogatePrediction, MODEL_FORMAT, MODEL_VERSION,
    SIGMA_FLOOR,
};
pub use features::{features_from_rollout, FeatureVector, FEATURE_DIM, FEATURE_HORIZON};
pub use standardizer::{Standardizer, STD_FLOOR};
pub use train::{
    regression_metrics, split_indices, train, Dataset, SplitMetrics, TrainingConfig,
    TrainingReport, TRAIN_FRACTION,
};
