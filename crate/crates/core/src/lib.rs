//! Context-aware ensemble forecasting.
//!
//! Base forecasters are combined linearly, `ŷ_t = wᵀŷ_t`, with weights that a
//! meta-learner produces from side information observed at `t`. Weights may
//! be unconstrained, affine (sum to one) or convex (on the simplex). The
//! crate provides the closed-form oracle weights under known second-order
//! statistics, boosted-tree and MLP meta-learners trained on constraint-aware
//! objectives, the two-phase train/combine pipeline, synthetic regime-mixing
//! generators and loss accounting.

/// Library version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod baselearners;
pub mod constraints;
pub mod datagen;
pub mod error;
pub mod frame;
pub mod gbdt;
pub mod linalg;
pub mod metrics;
pub mod mlp;
pub mod oracle;
pub mod params;
pub mod persist;
pub mod pipeline;
pub mod verify;

pub use constraints::ConstraintKind;
pub use error::{Error, Result};
pub use frame::{FeatureMatrix, PredictionBundle, SplitSpec, TimeSeriesFrame, WeightVector};
pub use linalg::Matrix;
