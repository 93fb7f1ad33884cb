//! Noisy-label segmentation pretraining laboratory.
//!
//! The crate is organised around the four stages of an experiment:
//!
//! * [`data`]: synthetic scenes, calibrated label corruption, label-quality
//!   assessment and the `.nlp` patch container.
//! * [`models`]: a small CPU tensor engine, the residual encoder and the three
//!   decoder frameworks (`unet`, `aspp`, `pyramid`), and the `NLCKPT01`
//!   checkpoint format used to transplant encoders between frameworks.
//! * [`training`]: combined cross-entropy/Dice loss, Adam, cosine schedule,
//!   noisy-label pretraining and downstream fine-tuning.
//! * [`analysis`]: activation capture, dominant principal component maps,
//!   Fisher ratios, weight-statistics KL divergence, Savitzky-Golay
//!   smoothing and segmentation metrics.
//!
//! Data-parallel loops (corpus generation, per-sample convolution, batch
//! evaluation, per-sample analysis) go through [`exec`], which uses rayon when
//! the `parallel` feature is enabled and falls back to plain iteration
//! otherwise. All reductions are performed in a fixed order, so results are
//! bit-identical regardless of the thread count.

pub mod analysis;
pub mod data;
pub mod exec;
pub mod models;
pub mod rng;
pub mod training;

pub use data::{DataError, NoiseConfig, PatchTriple, QualityReport, SceneConfig};
pub use analysis::{AnalysisError, AnalysisProfile, LayerActivationTrace, SegmentationMetrics};
pub use models::{CheckpointBundle, EncoderSpec, FrameworkKind, ModelError, Role, SegmentationModel};
pub use training::{RunLog, TrainConfig, TrainError};
