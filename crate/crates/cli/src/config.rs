//! Experiment configuration: one JSON file with a section per module.

use std::fs;
use std::path::{Path, PathBuf};

use noisylab::analysis::FisherOptions;
use noisylab::data::{CalibrationOptions, CorpusSizes, NoiseConfig, SceneConfig};
use noisylab::models::{EncoderSpec, FrameworkKind};
use noisylab::training::{EncoderMode, LabelSource, Phase, TrainConfig};
use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub encoder: EncoderSpec,
    /// Framework used for pretraining.
    pub pretrain_framework: FrameworkKind,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { encoder: EncoderSpec::default(), pretrain_framework: FrameworkKind::Unet }
    }
}

/// Encoder initialisation of a fine-tuning run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitSource {
    Random,
    /// Encoder pretrained on noisy labels.
    Noisy,
    /// Encoder pretrained on exact labels mapped to the pretraining classes.
    ExactMapped,
}

impl InitSource {
    pub fn name(self) -> &'static str {
        match self {
            InitSource::Random => "random",
            InitSource::Noisy => "noisy",
            InitSource::ExactMapped => "exact_mapped",
        }
    }

    pub fn pretrained_labels(self) -> Option<LabelSource> {
        match self {
            InitSource::Random => None,
            InitSource::Noisy => Some(LabelSource::Noisy),
            InitSource::ExactMapped => Some(LabelSource::ExactMapped),
        }
    }
}

pub fn label_name(l: LabelSource) -> &'static str {
    match l {
        LabelSource::Noisy => "noisy",
        LabelSource::Exact => "exact",
        LabelSource::ExactMapped => "exact_mapped",
    }
}

pub fn mode_name(m: EncoderMode) -> &'static str {
    match m {
        EncoderMode::Fixed => "fixed",
        EncoderMode::Finetuned => "finetuned",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunMatrix {
    pub pretrain_labels: Vec<LabelSource>,
    pub inits: Vec<InitSource>,
    pub frameworks: Vec<FrameworkKind>,
    pub encoder_modes: Vec<EncoderMode>,
}

impl Default for RunMatrix {
    fn default() -> Self {
        RunMatrix {
            pretrain_labels: vec![LabelSource::Noisy, LabelSource::ExactMapped],
            inits: vec![InitSource::Random, InitSource::Noisy],
            frameworks: vec![FrameworkKind::Unet, FrameworkKind::Aspp],
            encoder_modes: vec![EncoderMode::Fixed, EncoderMode::Finetuned],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub fisher: FisherOptions,
    /// Held-out test patches per Fisher profile.
    pub samples: usize,
    pub savgol_window: usize,
    pub savgol_polyorder: usize,
    /// Test patch shown in the dominant-component grid.
    pub grid_patch: usize,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection { fisher: FisherOptions::default(), samples: 64, savgol_window: 5, savgol_polyorder: 2, grid_patch: 0 }
    }
}

/// When present, `generate` searches the noise level that meets the target
/// instead of using the `noise` section as given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    pub target_mean_iou: f64,
    pub corpus_size: usize,
    pub options: CalibrationOptions,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        CalibrationSection { target_mean_iou: 0.5017, corpus_size: 200, options: CalibrationOptions::default() }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// Overlays the given keys on the phase defaults, so an omitted key takes
/// the phase's default rather than the pretraining one.
fn phase_section<'de, D: Deserializer<'de>>(d: D, base: TrainConfig) -> Result<TrainConfig, D::Error> {
    use serde::de::Error;
    let given = serde_json::Value::deserialize(d)?;
    let mut merged = serde_json::to_value(base).map_err(D::Error::custom)?;
    match (merged.as_object_mut(), given) {
        (Some(m), serde_json::Value::Object(o)) => m.extend(o),
        _ => return Err(D::Error::custom("training section must be an object")),
    }
    serde_json::from_value(merged).map_err(D::Error::custom)
}

fn pretrain_section<'de, D: Deserializer<'de>>(d: D) -> Result<TrainConfig, D::Error> {
    phase_section(d, TrainConfig::pretrain())
}

fn finetune_section<'de, D: Deserializer<'de>>(d: D) -> Result<TrainConfig, D::Error> {
    phase_section(d, TrainConfig::finetune())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub scene: SceneConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub calibration: Option<CalibrationSection>,
    #[serde(default)]
    pub corpus: CorpusSizes,
    /// Seed of corpus generation.
    #[serde(default)]
    pub data_seed: u64,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default = "TrainConfig::pretrain", deserialize_with = "pretrain_section")]
    pub pretrain: TrainConfig,
    #[serde(default = "TrainConfig::finetune", deserialize_with = "finetune_section")]
    pub finetune: TrainConfig,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub matrix: RunMatrix,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| CliError::config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CliError::missing(path, "config file"),
            _ => CliError::config(format!("cannot read config file {}: {e}", path.display())),
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::config(msg));
        self.scene.validate()?;
        self.noise.validate()?;
        self.model.encoder.validate()?;
        if self.model.encoder.in_channels != self.scene.channels {
            return bad(format!(
                "model.encoder.in_channels ({}) must equal scene.channels ({})",
                self.model.encoder.in_channels, self.scene.channels
            ));
        }
        let stride = self.model.encoder.output_stride();
        if !self.scene.patch_size.is_multiple_of(stride) {
            return bad(format!("scene.patch_size {} is not divisible by the output stride {stride}", self.scene.patch_size));
        }
        for (name, t, phase) in [("pretrain", &self.pretrain, Phase::Pretrain), ("finetune", &self.finetune, Phase::Finetune)] {
            if t.phase != phase {
                return bad(format!("{name}.phase must be {name}"));
            }
            t.validate().map_err(|e| CliError::config(format!("{name}: {e}")))?;
            if let Some(c) = t.crop_size {
                if c % stride != 0 || c > self.scene.patch_size {
                    return bad(format!("{name}.crop_size {c} must divide by {stride} and fit the patch"));
                }
            }
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        let m = &self.matrix;
        if m.pretrain_labels.is_empty() || m.inits.is_empty() || m.frameworks.is_empty() || m.encoder_modes.is_empty() {
            return bad("matrix lists must not be empty".into());
        }
        if m.pretrain_labels.contains(&LabelSource::Exact) {
            return bad("matrix.pretrain_labels: pretraining uses the mapped class set; use exact_mapped".into());
        }
        for init in &m.inits {
            if let Some(l) = init.pretrained_labels() {
                if !m.pretrain_labels.contains(&l) {
                    return bad(format!("matrix.inits: {} needs {} in matrix.pretrain_labels", init.name(), label_name(l)));
                }
            }
        }
        let a = &self.analysis;
        if a.samples == 0 {
            return bad("analysis.samples must be at least 1".into());
        }
        if a.savgol_window.is_multiple_of(2) || a.savgol_polyorder >= a.savgol_window {
            return bad("analysis: savgol_window must be odd and larger than savgol_polyorder".into());
        }
        if self.corpus.test == 0 || self.corpus.finetune == 0 || self.corpus.pretrain == 0 {
            return bad("corpus: every split needs at least one location".into());
        }
        Ok(())
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical_json().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}
