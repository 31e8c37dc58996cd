//! Gradient-boosted trees over categorical features with a multiclass softmax objective.

mod boost;
mod encoder;

pub use boost::{fit, BoostParams, CategoricalMatrix, FeatureImportance, Node, TreeEnsemble};
pub use encoder::CategoricalEncoder;
