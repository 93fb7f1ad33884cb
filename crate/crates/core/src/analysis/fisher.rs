//! Pairwise two-class Fisher ratio of feature cubes and per-module
//! profiles over held-out samples.

use serde::{Deserialize, Serialize};

use super::capture::capture_activations;
use super::profile::{mean_std, AnalysisProfile, ProfileEntry, ProfileKind};
use super::AnalysisError;
use crate::data::{ClassMask, Image};
use crate::exec::Exec;
use crate::models::{SegmentationModel, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FisherOptions {
    pub epsilon: f64,
    /// Classes with fewer pixels (after resampling) are ignored.
    pub min_pixels: usize,
    pub exclude_background: bool,
}

impl Default for FisherOptions {
    fn default() -> Self {
        FisherOptions { epsilon: 1e-8, min_pixels: 10, exclude_background: false }
    }
}

/// Mean over channels of the mean over valid class pairs of
/// `(mu_k - mu_l)^2 / (var_k + var_l + eps)`. Labels are nearest-neighbour
/// resampled to the cube's spatial size.
pub fn fisher_ratio(cube: &Tensor, labels: &ClassMask, options: &FisherOptions) -> Result<f64, AnalysisError> {
    if cube.n != 1 || cube.c == 0 {
        return Err(AnalysisError::Config { field: "cube".into(), reason: format!("expected [1, C>=1, H, W], got {:?}", cube.shape()) });
    }
    if !cube.is_finite() {
        return Err(AnalysisError::NonFinite("feature cube".into()));
    }
    let labels =
        if (labels.height, labels.width) == (cube.h, cube.w) { labels.clone() } else { labels.resample_nearest(cube.h, cube.w) };
    let k = labels.num_classes as usize;
    let mut counts = vec![0usize; k];
    for &l in &labels.data {
        counts[l as usize] += 1;
    }
    let classes: Vec<usize> = (0..k)
        .filter(|&c| counts[c] >= options.min_pixels.max(1) && !(options.exclude_background && c == 0))
        .collect();
    if classes.len() < 2 {
        return Err(AnalysisError::Undefined(format!("{} valid classes (need 2)", classes.len())));
    }
    let hw = cube.plane();
    let mut total = 0.0;
    for ch in 0..cube.c {
        let plane = &cube.data[ch * hw..(ch + 1) * hw];
        let mut sum = vec![0.0f64; k];
        for (&v, &l) in plane.iter().zip(&labels.data) {
            sum[l as usize] += v as f64;
        }
        let mean: Vec<f64> = (0..k).map(|c| if counts[c] > 0 { sum[c] / counts[c] as f64 } else { 0.0 }).collect();
        let mut sq = vec![0.0f64; k];
        for (&v, &l) in plane.iter().zip(&labels.data) {
            sq[l as usize] += (v as f64 - mean[l as usize]).powi(2);
        }
        let var: Vec<f64> = (0..k).map(|c| if counts[c] > 0 { sq[c] / counts[c] as f64 } else { 0.0 }).collect();
        let (mut acc, mut pairs) = (0.0, 0usize);
        for (i, &a) in classes.iter().enumerate() {
            for &b in &classes[i + 1..] {
                acc += (mean[a] - mean[b]).powi(2) / (var[a] + var[b] + options.epsilon);
                pairs += 1;
            }
        }
        total += acc / pairs as f64;
    }
    Ok(total / cube.c as f64)
}

/// Per-module Fisher ratio for each `(image, mask)` sample; `None` where the
/// ratio is undefined.
pub fn fisher_samples(
    model: &SegmentationModel,
    images: &[Image],
    masks: &[ClassMask],
    options: &FisherOptions,
) -> Result<Vec<Vec<Option<f64>>>, AnalysisError> {
    if images.len() != masks.len() || images.is_empty() {
        return Err(AnalysisError::Config { field: "samples".into(), reason: "need equally many images and masks, at least one".into() });
    }
    let rows = Exec::current().map(images.len(), |i| -> Result<Vec<Option<f64>>, AnalysisError> {
        let mut m = model.clone();
        m.set_exec(Exec::Sequential);
        let trace = capture_activations(&mut m, &images[i])?;
        trace
            .cubes
            .iter()
            .map(|cube| match fisher_ratio(cube, &masks[i], options) {
                Ok(v) => Ok(Some(v)),
                Err(AnalysisError::Undefined(_)) => Ok(None),
                Err(e) => Err(e),
            })
            .collect()
    });
    rows.into_iter().collect()
}

/// Mean and population std over samples of each module's Fisher ratio.
/// Modules undefined on every sample are gaps.
pub fn fisher_profile(
    model: &SegmentationModel,
    images: &[Image],
    masks: &[ClassMask],
    options: &FisherOptions,
) -> Result<AnalysisProfile, AnalysisError> {
    let rows = fisher_samples(model, images, masks, options)?;
    let entries = model
        .module_paths()
        .iter()
        .enumerate()
        .map(|(j, info)| {
            let vals: Vec<f64> = rows.iter().filter_map(|r| r[j]).collect();
            let (value, std) = if vals.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_std(&vals);
                (Some(m), Some(s))
            };
            ProfileEntry { path: info.path.clone(), side: info.side, value, std }
        })
        .collect();
    Ok(AnalysisProfile { kind: ProfileKind::Fisher, entries, smoothing: None })
}
