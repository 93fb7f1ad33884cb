//! Combined CE + Dice loss, Adam, learning-rate schedules and the
//! pretraining / fine-tuning loops.

mod config;
mod log;
mod loss;
mod optim;
mod schedule;
mod trainer;

pub use config::{EncoderMode, LabelSource, Phase, TrainConfig};
pub use log::{EpochRecord, EvalRecord, RunLog, StepRecord};
pub use loss::{combined_loss, LossOutput, LossWeights, DICE_SMOOTH};
pub use optim::Adam;
pub use schedule::{cosine_lr, Schedule};
pub use trainer::{argmax_masks, finetune, predict_masks, pretrain, EvalSet, TrainOutput, TrainingSet};

use thiserror::Error;

use crate::analysis::AnalysisError;
use crate::data::DataError;
use crate::models::ModelError;

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("invalid training configuration: {field}: {reason}")]
    Config { field: String, reason: String },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: u8, num_classes: usize },
    #[error("non-finite logits")]
    NonFiniteLogits,
    #[error("loss became non-finite at epoch {epoch}, batch {batch}, lr {lr}")]
    NonFinite { epoch: usize, batch: usize, lr: f64 },
    #[error("empty training set")]
    Empty,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}
