use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::loss::LossWeights;
use super::schedule::Schedule;
use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Finetune,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderMode {
    Fixed,
    Finetuned,
}

/// Which mask of each patch supervises training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Noisy,
    Exact,
    /// Exact mask relabelled onto the pretraining class set.
    ExactMapped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub phase: Phase,
    pub epochs: usize,
    pub batch_size: usize,
    /// Defaults: 1e-3 when pretraining, 5e-4 when fine-tuning.
    pub base_lr: Option<f64>,
    /// Defaults: constant when pretraining, cosine when fine-tuning.
    pub schedule: Option<Schedule>,
    pub loss_weights: LossWeights,
    pub crop_size: Option<usize>,
    pub augment: bool,
    pub seed: u64,
    pub encoder_mode: EncoderMode,
    pub label_source: Option<LabelSource>,
    pub eval_interval: usize,
    pub checkpoint_interval: Option<usize>,
    pub weight_decay: f64,
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::pretrain()
    }
}

impl TrainConfig {
    pub fn pretrain() -> Self {
        TrainConfig {
            phase: Phase::Pretrain,
            epochs: 50,
            batch_size: 32,
            base_lr: None,
            schedule: None,
            loss_weights: LossWeights::default(),
            crop_size: None,
            augment: true,
            seed: 0,
            encoder_mode: EncoderMode::Finetuned,
            label_source: None,
            eval_interval: 5,
            checkpoint_interval: None,
            weight_decay: 0.0,
            grad_clip: None,
        }
    }

    /// Fine-tuning defaults: the small downstream set gets a smaller batch
    /// so each epoch still has a useful number of steps.
    pub fn finetune() -> Self {
        TrainConfig { phase: Phase::Finetune, epochs: 40, batch_size: 8, ..TrainConfig::pretrain() }
    }

    pub fn lr(&self) -> f64 {
        self.base_lr.unwrap_or(match self.phase {
            Phase::Pretrain => 1e-3,
            Phase::Finetune => 5e-4,
        })
    }

    pub fn resolved_schedule(&self) -> Schedule {
        self.schedule.unwrap_or(match self.phase {
            Phase::Pretrain => Schedule::Constant,
            Phase::Finetune => Schedule::Cosine,
        })
    }

    pub fn labels(&self) -> LabelSource {
        self.label_source.unwrap_or(match self.phase {
            Phase::Pretrain => LabelSource::Noisy,
            Phase::Finetune => LabelSource::Exact,
        })
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |field: &str, reason: &str| Err(TrainError::Config { field: field.into(), reason: reason.into() });
        if !(self.lr() > 0.0 && self.lr().is_finite()) {
            return bad("base_lr", "must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if self.eval_interval == 0 {
            return bad("eval_interval", "must be at least 1");
        }
        if self.checkpoint_interval == Some(0) {
            return bad("checkpoint_interval", "must be at least 1");
        }
        if self.phase == Phase::Pretrain && self.encoder_mode == EncoderMode::Fixed {
            return bad("encoder_mode", "a fixed encoder applies to fine-tuning only");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay", "must be >= 0");
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return bad("grad_clip", "must be positive");
        }
        self.loss_weights.validate()
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}
