//! Parameterised label corruption.
//!
//! Objects are the 4-connected components of the relabeled mask (pretraining
//! class set). Each object draws, in a fixed order, its drop / swap / jitter
//! variables, so changing one probability never shifts the random stream of
//! the others. Dropping is applied last to the pixels an object finally owns;
//! as a consequence raising `object_drop_prob` can only remove true
//! positives.

use rand::Rng as _;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::raster::{ClassMap, ClassMask};
use super::DataError;
use crate::rng::{seeded, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub object_drop_prob: f64,
    /// Upper bound of the per-object erosion/dilation radius in pixels.
    pub boundary_radius: f64,
    /// Expected number of false-positive blobs per patch.
    pub blob_fp_rate: f64,
    pub class_swap_prob: f64,
    pub rng_seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig::zero(0)
    }
}

impl NoiseConfig {
    pub fn zero(rng_seed: u64) -> Self {
        NoiseConfig { object_drop_prob: 0.0, boundary_radius: 0.0, blob_fp_rate: 0.0, class_swap_prob: 0.0, rng_seed }
    }

    pub fn is_zero(&self) -> bool {
        self.object_drop_prob == 0.0 && self.boundary_radius == 0.0 && self.blob_fp_rate == 0.0 && self.class_swap_prob == 0.0
    }

    pub fn with_seed(&self, rng_seed: u64) -> Self {
        NoiseConfig { rng_seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        for (name, p) in [("object_drop_prob", self.object_drop_prob), ("class_swap_prob", self.class_swap_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(DataError::config(name, format!("{p} outside [0,1]")));
            }
        }
        if !(self.boundary_radius >= 0.0 && self.boundary_radius.is_finite()) {
            return Err(DataError::config("boundary_radius", "must be finite and >= 0"));
        }
        if !(self.blob_fp_rate >= 0.0 && self.blob_fp_rate.is_finite()) {
            return Err(DataError::config("blob_fp_rate", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// 4-connected components of equal non-background class, numbered 1.. in
/// raster-scan order of their first pixel. Background pixels get 0.
fn components(mask: &ClassMask) -> (Vec<u32>, Vec<u8>) {
    let (h, w) = (mask.height, mask.width);
    let mut label = vec![0u32; h * w];
    let mut classes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        let c = mask.data[start];
        if c == 0 || label[start] != 0 {
            continue;
        }
        classes.push(c);
        let id = classes.len() as u32;
        label[start] = id;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (y, x) = (i / w, i % w);
            let mut visit = |j: usize| {
                if label[j] == 0 && mask.data[j] == c {
                    label[j] = id;
                    stack.push(j);
                }
            };
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
        }
    }
    (label, classes)
}

fn disk(r: i64) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                out.push((dy, dx));
            }
        }
    }
    out
}

struct ObjectDraw {
    drop: bool,
    class: u8,
    radius: i64,
    erode: bool,
}

fn draw_object(rng: &mut Rng, class: u8, num_targets: u8, noise: &NoiseConfig) -> ObjectDraw {
    let u_drop: f64 = rng.random();
    let u_swap: f64 = rng.random();
    let u_choice: f64 = rng.random();
    let u_radius: f64 = rng.random();
    let u_erode: f64 = rng.random();
    let others = num_targets.saturating_sub(2);
    let class = if u_swap < noise.class_swap_prob && others > 0 {
        // uniform over the non-background classes other than `class`
        let pick = ((u_choice * others as f64) as u8).min(others - 1) + 1;
        if pick >= class {
            pick + 1
        } else {
            pick
        }
    } else {
        class
    };
    ObjectDraw {
        drop: u_drop < noise.object_drop_prob,
        class,
        radius: (u_radius * noise.boundary_radius).round() as i64,
        erode: u_erode < 0.5,
    }
}

/// Corrupts `exact_mask` (exact class set) into a noisy mask on the
/// pretraining class set of `class_map`.
pub fn corrupt_mask(exact_mask: &ClassMask, class_map: &ClassMap, noise: &NoiseConfig) -> ClassMask {
    let relabeled = class_map.apply(exact_mask);
    let (h, w) = (relabeled.height, relabeled.width);
    let (label, classes) = components(&relabeled);
    let mut rng = seeded(noise.rng_seed);

    let draws: Vec<ObjectDraw> = classes
        .iter()
        .map(|&c| draw_object(&mut rng, c, class_map.num_targets, noise))
        .collect();

    let mut out = vec![0u8; h * w];
    // owner: object id + 1 that wrote the pixel last; 0 for background/blobs
    let mut owner = vec![0u32; h * w];
    for (obj, d) in draws.iter().enumerate() {
        let id = obj as u32 + 1;
        let pixels: Vec<usize> = (0..h * w).filter(|&i| label[i] == id).collect();
        let footprint: Vec<usize> = if d.radius == 0 {
            pixels
        } else {
            let offsets = disk(d.radius);
            if d.erode {
                pixels
                    .into_iter()
                    .filter(|&i| {
                        let (y, x) = ((i / w) as i64, (i % w) as i64);
                        offsets.iter().all(|&(dy, dx)| {
                            let (yy, xx) = (y + dy, x + dx);
                            // the patch border does not erode
                            yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 || label[yy as usize * w + xx as usize] == id
                        })
                    })
                    .collect()
            } else {
                let mut hit = vec![false; h * w];
                for &i in &pixels {
                    let (y, x) = ((i / w) as i64, (i % w) as i64);
                    for &(dy, dx) in &offsets {
                        let (yy, xx) = (y + dy, x + dx);
                        if yy >= 0 && xx >= 0 && yy < h as i64 && xx < w as i64 {
                            hit[yy as usize * w + xx as usize] = true;
                        }
                    }
                }
                (0..h * w).filter(|&i| hit[i]).collect()
            }
        };
        for i in footprint {
            out[i] = d.class;
            owner[i] = id;
        }
    }

    if noise.blob_fp_rate > 0.0 && class_map.num_targets > 1 {
        let count = Poisson::new(noise.blob_fp_rate).map(|p| p.sample(&mut rng) as usize).unwrap_or(0);
        for _ in 0..count {
            let cy: f64 = rng.random_range(0.0..h as f64);
            let cx: f64 = rng.random_range(0.0..w as f64);
            let r: f64 = rng.random_range(2.0..6.0);
            let class = rng.random_range(1..class_map.num_targets);
            for y in 0..h {
                for x in 0..w {
                    let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                    if dy * dy + dx * dx <= r * r {
                        out[y * w + x] = class;
                        owner[y * w + x] = 0;
                    }
                }
            }
        }
    }

    for i in 0..h * w {
        let o = owner[i];
        if o != 0 && draws[o as usize - 1].drop {
            out[i] = 0;
        }
    }

    ClassMask { height: h, width: w, num_classes: class_map.num_targets, data: out }
}
