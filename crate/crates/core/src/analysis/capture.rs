use super::AnalysisError;
use crate::data::Image;
use crate::models::{
    CheckpointBundle, CheckpointEntry, CheckpointMetadata, ModuleInfo, Provenance, Role, SegmentationModel, Tensor,
};

/// Post-activation output of every convolutional module for one input, in
/// `module_paths` order. Each cube is a `[1, C, H, W]` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerActivationTrace {
    pub modules: Vec<ModuleInfo>,
    pub cubes: Vec<Tensor>,
    /// Seed of the input patch, when known.
    pub input_seed: Option<u64>,
}

impl LayerActivationTrace {
    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    pub fn get(&self, path: &str) -> Option<&Tensor> {
        self.modules.iter().position(|m| m.path == path).map(|i| &self.cubes[i])
    }

    /// Trace as an `NLCKPT01` bundle with role `activation`; cube shapes are
    /// `[C, H, W]`.
    pub fn to_bundle(&self, model: &SegmentationModel) -> CheckpointBundle {
        let entries = self
            .modules
            .iter()
            .zip(&self.cubes)
            .map(|(m, t)| CheckpointEntry { path: m.path.clone(), shape: vec![t.c, t.h, t.w], role: Role::Activation, data: t.data.clone() })
            .collect();
        CheckpointBundle {
            entries,
            metadata: CheckpointMetadata {
                encoder_spec: model.spec().clone(),
                framework: model.kind(),
                num_classes: model.num_classes(),
                provenance: Provenance { config_hash: String::new(), seed: self.input_seed.unwrap_or(0), epoch: 0 },
            },
        }
    }
}

/// Inference-mode forward recording every module output. Running statistics
/// are not touched.
pub fn capture_activations(model: &mut SegmentationModel, image: &Image) -> Result<LayerActivationTrace, AnalysisError> {
    let x = Tensor::from_vec(1, image.channels, image.height, image.width, image.data.clone());
    let (_, items) = model.forward_capture(&x)?;
    let cubes: Vec<Tensor> = items.into_iter().map(|(_, t)| t).collect();
    if let Some(i) = cubes.iter().position(|t| !t.is_finite()) {
        return Err(AnalysisError::NonFinite(model.module_paths()[i].path.clone()));
    }
    Ok(LayerActivationTrace { modules: model.module_paths().to_vec(), cubes, input_seed: None })
}
