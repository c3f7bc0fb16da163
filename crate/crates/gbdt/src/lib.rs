//! Gradient-boosted regression trees on histogram bins.
//!
//! Trees grow leaf-wise on L2 gradients with bagging, per-round feature
//! subsampling, L1 soft-thresholding and exclusive feature bundling.

pub mod binning;
pub mod bundle;
pub mod config;
pub mod error;
pub mod model;
pub mod train;
pub mod tree;

pub use binning::{bin_features, BinnedDataset, FeatureBins};
pub use bundle::{bundle_exclusive_features, Bundle, BundledDataset, Member};
pub use config::{GbdtConfig, MAX_BINS_LIMIT};
pub use error::{GbdtError, Result};
pub use model::{assemble_design_matrix, GbdtModel, StopReason, FORMAT_VERSION};
pub use train::{fit, leaf_value, soft_threshold, split_gain, train_gbdt, Validation};
pub use tree::{Node, RegressionTree};

/// Design matrices in the two supported precisions.
pub type Design64 = roc_core::DenseMatrix<f64>;
pub type Design32 = roc_core::DenseMatrix<f32>;
