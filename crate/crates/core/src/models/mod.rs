//! Residual encoder, the three decoder frameworks, and checkpoint transplant.

mod checkpoint;
mod layers;
mod network;
mod params;
mod tensor;

pub use checkpoint::{CheckpointBundle, CheckpointEntry, CheckpointMetadata, ImportReport, ImportScope, Provenance, CHECKPOINT_MAGIC};
pub use layers::{
    adaptive_avg_pool, adaptive_avg_pool_backward, concat_channels, resize_bilinear, resize_bilinear_backward, BatchNorm2d, Conv2d,
};
pub use network::{build_model, EncoderSpec, FrameworkKind, Mode, ModuleInfo, SegmentationModel, Side};
pub use params::{Param, ParamId, ParamKind, ParamStore, Role};
pub use tensor::{gemm, ConvGeometry, Tensor};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model configuration: {field}: {reason}")]
    InvalidSpec { field: String, reason: String },
    #[error("input {height}x{width} is not divisible by the output stride {stride}")]
    InputNotDivisible { height: usize, width: usize, stride: usize },
    #[error("input has {found} channels, model expects {expected}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("encoder spec mismatch: checkpoint {checkpoint}, model {model}")]
    SpecMismatch { checkpoint: String, model: String },
    #[error("shape mismatch at {path}: checkpoint {checkpoint:?}, model {model:?}")]
    ShapeMismatch { path: String, checkpoint: Vec<usize>, model: Vec<usize> },
    #[error("strict import: missing {missing:?}, unexpected {extra:?}")]
    MissingOrExtra { missing: Vec<String>, extra: Vec<String> },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}
