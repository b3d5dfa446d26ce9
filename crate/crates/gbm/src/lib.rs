//! Histogram gradient-boosted decision trees with leaf-wise growth and a
//! binary logistic objective.

pub mod binning;
mod boost;
mod error;
pub mod hexfloat;
pub mod histogram;
pub mod split;
pub mod tree;

pub use binning::{BinnedDataset, Binner, FeatureBins, FeatureKind, FeatureSpec, Value, MISSING_BIN};
pub use boost::{fit, gradients_logistic, logloss, sigmoid, Ensemble, GbmConfig, FORMAT_VERSION};
pub use error::{GbmError, Result};
pub use histogram::{BinStats, Histogram};
pub use split::{find_best_split, split_gain, SplitCandidate, SplitParams, SplitRule};
pub use tree::{grow_tree, Node, Tree, TreeParams};
