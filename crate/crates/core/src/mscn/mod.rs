//! The multi-set cardinality model.

pub mod features;
pub mod model;

pub use features::{featurize, FeatureSet, FeatureWidths, Featurizer, SetFeatures};
pub use model::{predict, Batch, MscnEstimator, MscnModel, DEFAULT_CLAMP_FLOOR, DEFAULT_HIDDEN};
