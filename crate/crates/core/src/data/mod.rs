//! Synthetic scene/label generation, label corruption, label-quality
//! assessment and the `.nlp` patch container.

mod augment;
mod calibrate;
mod container;
mod corpus;
mod noise;
mod quality;
mod raster;
mod scene;

pub use augment::{augment, flip_triple};
pub use calibrate::{calibrate_noise, measure_noise, CalibrationOptions, NoiseBounds, QualityMeans};
pub use container::{read_patch, read_patch_bytes, write_patch, write_patch_bytes, NLP_MAGIC, NLP_VERSION};
pub use corpus::{generate_corpus, generate_corpus_with, load_corpus, save_corpus, Corpus, CorpusEntry, CorpusSizes, Manifest, ManifestEntry, Split};
pub use noise::{corrupt_mask, NoiseConfig};
pub use quality::{assess_label_quality, ClassQuality, ConfusionMatrix, QualityReport};
pub(crate) use quality::pooled_confusion;
pub use raster::{ClassMap, ClassMask, Image, PatchTriple};
pub use scene::{generate_scene, generate_scene_variant, ClassSpec, SceneConfig, ShapeKind, ShapeParams, TextureKind};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },
    #[error("invalid patch: {0}")]
    InvalidPatch(String),
    #[error("bad magic bytes: expected \"NLPT\", found {found:?}")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported container version {found} (expected {expected})")]
    VersionMismatch { found: u8, expected: u8 },
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),
    #[error("class-set mismatch: {0}")]
    ClassMismatch(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("variant shape mismatch: expected {expected:?}, found {found:?}")]
    VariantShape { expected: (usize, usize, usize), found: (usize, usize, usize) },
    #[error("calibration failed: target mean IoU {target:.4}, best achieved {best:.4}")]
    CalibrationFailed { target: f64, best: f64 },
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("manifest error: {0}")]
    Manifest(String),
}

impl DataError {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        DataError::Config { field: field.into(), reason: reason.into() }
    }

    pub(crate) fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        DataError::Io { path: path.display().to_string(), message: err.to_string() }
    }
}
