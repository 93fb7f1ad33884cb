//! Noise calibration against a target label quality.
//!
//! The four corruption knobs are tied to one severity `t` in `[0, 1]`:
//! `knob(t) = lower + t * (upper - lower)`. The search evaluates mean IoU on
//! a fixed calibration corpus (common random numbers, so the curve is close
//! to monotone in `t`) over a uniform grid, then bisects the first bracket
//! that straddles the target. The best point seen is returned if it lies
//! within `tolerance` of the target.

use serde::{Deserialize, Serialize};

use super::noise::{corrupt_mask, NoiseConfig};
use super::quality::{ConfusionMatrix, QualityReport};
use super::raster::ClassMask;
use super::scene::{generate_scene, SceneConfig};
use super::DataError;
use crate::exec::Exec;
use crate::rng::derive;

const NOISE_STREAM: u64 = 0x21;

/// Target mean statistics of a quality report. Only `mean_iou` drives the
/// search; the other means are carried for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualityMeans {
    pub mean_precision: Option<f64>,
    pub mean_recall: Option<f64>,
    pub mean_iou: f64,
}

impl QualityMeans {
    pub fn iou(mean_iou: f64) -> Self {
        QualityMeans { mean_precision: None, mean_recall: None, mean_iou }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseBounds {
    pub lower: NoiseConfig,
    pub upper: NoiseConfig,
}

impl Default for NoiseBounds {
    fn default() -> Self {
        NoiseBounds {
            lower: NoiseConfig::zero(0),
            upper: NoiseConfig { object_drop_prob: 0.8, boundary_radius: 4.0, blob_fp_rate: 6.0, class_swap_prob: 0.4, rng_seed: 0 },
        }
    }
}

impl NoiseBounds {
    pub fn at(&self, t: f64, rng_seed: u64) -> NoiseConfig {
        let lerp = |a: f64, b: f64| a + t * (b - a);
        NoiseConfig {
            object_drop_prob: lerp(self.lower.object_drop_prob, self.upper.object_drop_prob),
            boundary_radius: lerp(self.lower.boundary_radius, self.upper.boundary_radius),
            blob_fp_rate: lerp(self.lower.blob_fp_rate, self.upper.blob_fp_rate),
            class_swap_prob: lerp(self.lower.class_swap_prob, self.upper.class_swap_prob),
            rng_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationOptions {
    pub bounds: NoiseBounds,
    pub seed: u64,
    pub tolerance: f64,
    pub grid_points: usize,
    pub refine_steps: usize,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions { bounds: NoiseBounds::default(), seed: 0, tolerance: 0.05, grid_points: 11, refine_steps: 12 }
    }
}

fn reference_masks(scene: &SceneConfig, corpus_size: usize, seed: u64) -> Result<Vec<ClassMask>, DataError> {
    Exec::current()
        .map(corpus_size, |i| generate_scene(scene, seed ^ i as u64).map(|(_, m)| m))
        .into_iter()
        .collect()
}

fn measure_on(scene: &SceneConfig, exact: &[ClassMask], noise: &NoiseConfig, seed: u64) -> QualityReport {
    let map = &scene.pretrain_class_map;
    let k = map.num_targets as usize;
    let parts = Exec::current().map(exact.len(), |i| {
        let cfg = noise.with_seed(derive(seed ^ i as u64, NOISE_STREAM));
        let reference = map.apply(&exact[i]);
        let noisy = corrupt_mask(&exact[i], map, &cfg);
        let mut cm = ConfusionMatrix::new(k);
        cm.add_mask(&reference, &noisy);
        cm
    });
    let mut cm = ConfusionMatrix::new(k);
    parts.iter().for_each(|p| cm.merge(p));
    QualityReport::from_confusion(&cm, &scene.pretrain_class_names)
}

/// Label quality of `noise` over `corpus_size` fresh patches (scene seed
/// `seed ^ i`, noise stream derived from it as in corpus generation).
pub fn measure_noise(scene: &SceneConfig, noise: &NoiseConfig, corpus_size: usize, seed: u64) -> Result<QualityReport, DataError> {
    scene.validate()?;
    noise.validate()?;
    if corpus_size == 0 {
        return Err(DataError::Empty("corpus_size must be positive".into()));
    }
    let exact = reference_masks(scene, corpus_size, seed)?;
    Ok(measure_on(scene, &exact, noise, seed))
}

pub fn calibrate_noise(
    target: &QualityMeans,
    corpus_size: usize,
    scene: &SceneConfig,
    options: &CalibrationOptions,
) -> Result<NoiseConfig, DataError> {
    scene.validate()?;
    if !(target.mean_iou > 0.0 && target.mean_iou <= 1.0) {
        return Err(DataError::config("target.mean_iou", "must lie in (0, 1]"));
    }
    if corpus_size == 0 {
        return Err(DataError::Empty("corpus_size must be positive".into()));
    }
    options.bounds.lower.validate()?;
    options.bounds.upper.validate()?;
    let grid = options.grid_points.max(2);
    let seed = options.seed;
    let exact = reference_masks(scene, corpus_size, seed)?;
    let eval = |t: f64| measure_on(scene, &exact, &options.bounds.at(t, seed), seed).mean_iou;

    let mut best = (f64::INFINITY, 0.0, f64::NAN);
    let consider = |t: f64, m: f64, best: &mut (f64, f64, f64)| {
        let err = (m - target.mean_iou).abs();
        if err < best.0 {
            *best = (err, t, m);
        }
    };

    let points: Vec<(f64, f64)> = (0..grid)
        .map(|i| {
            let t = i as f64 / (grid - 1) as f64;
            (t, eval(t))
        })
        .collect();
    for &(t, m) in &points {
        consider(t, m, &mut best);
    }
    if best.0 > 0.0 {
        let bracket = points
            .windows(2)
            .find(|w| (w[0].1 - target.mean_iou) * (w[1].1 - target.mean_iou) <= 0.0);
        if let Some(w) = bracket {
            let (mut lo, mut hi) = (w[0], w[1]);
            for _ in 0..options.refine_steps {
                let t = 0.5 * (lo.0 + hi.0);
                let m = eval(t);
                consider(t, m, &mut best);
                if (m - target.mean_iou) * (lo.1 - target.mean_iou) <= 0.0 {
                    hi = (t, m);
                } else {
                    lo = (t, m);
                }
            }
        }
    }
    let (err, t, achieved) = best;
    if err > options.tolerance {
        return Err(DataError::CalibrationFailed { target: target.mean_iou, best: achieved });
    }
    Ok(options.bounds.at(t, seed))
}
