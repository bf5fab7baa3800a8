//! Unique-class-count (ucc) weakly supervised clustering.
//!
//! A bag classifier is trained only on the number of distinct classes present
//! in each bag. Instances are embedded by a small feature network, pooled into
//! per-feature histograms by a differentiable Gaussian KDE layer and fed to a
//! distribution regression network. The trained feature network then drives
//! unsupervised clustering of individual instances and patch-based
//! segmentation.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below are the configurations used by the CLI and the test suites.

// NaN-rejecting checks are written as `!(x > 0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod bags;
pub mod checkpoint;
pub mod cluster;
pub mod error;
pub mod io;
pub mod kde;
pub mod model;
pub mod ndcore;
pub mod oracle;
pub mod pipeline;
pub mod scalar;
pub mod segmentation;
pub mod synth;
pub mod train;

pub use error::{Result, UccError};
pub use scalar::Scalar;

pub type Matrix64 = ndcore::Matrix<f64>;
pub type Matrix32 = ndcore::Matrix<f32>;
pub type MlpParams64 = ndcore::MlpParams<f64>;
pub type KdeConfig64 = kde::KdeConfig<f64>;
pub type FeatureDistribution64 = kde::FeatureDistribution<f64>;
pub type UccModel64 = model::UccModel<f64>;
pub type UccModel32 = model::UccModel<f32>;
pub type TrainConfig64 = train::TrainConfig<f64>;
pub type InstancePool64 = bags::InstancePool<f64>;
pub type LabeledImage64 = segmentation::LabeledImage<f64>;
pub type JsMatrix64 = cluster::JsMatrix<f64>;
