//! Layer diagnostics (dominant principal components, Fisher ratios, weight
//! divergence profiles, smoothing) and segmentation metrics.

mod capture;
mod fisher;
mod kl;
mod metrics;
mod pca;
mod profile;
mod savgol;

pub use capture::{capture_activations, LayerActivationTrace};
pub use fisher::{fisher_profile, fisher_ratio, fisher_samples, FisherOptions};
pub use kl::{gaussian_kl, weight_kl_profile, weight_kl_profile_multi};
pub use metrics::{evaluate_segmentation, SegmentationMetrics};
pub use pca::dominant_component_image;
pub use profile::{AnalysisProfile, ProfileEntry, ProfileKind, Smoothing};
pub use savgol::savgol_smooth;

use thiserror::Error;

use crate::data::DataError;
use crate::models::ModelError;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("invalid argument: {field}: {reason}")]
    Config { field: String, reason: String },
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("undefined ratio: {0}")]
    Undefined(String),
    #[error("module path mismatch: {0}")]
    PathMismatch(String),
    #[error("zero-variance weights at {path}")]
    ZeroVariance { path: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}
