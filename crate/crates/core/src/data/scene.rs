//! Synthetic scene generator standing in for orthophoto / ground-truth pairs.
//!
//! A scene is a textured background over which class objects (blobs,
//! rectangles, strips) are painted in layer order. Objects carry their own
//! texture so classes overlap in per-channel reflectance and can only be told
//! apart by texture and shape.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::raster::{ClassMap, ClassMask, Image};
use super::DataError;
use crate::rng::{derive, seeded, Rng};

const GEOMETRY_STREAM: u64 = 0x11;
const APPEARANCE_STREAM: u64 = 0x12;
const PIXEL_NOISE_STREAM: u64 = 0x13;
const PIXEL_NOISE_STD: f64 = 0.015;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Background,
    Blob,
    Rect,
    Strip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureKind {
    /// Low-frequency sinusoidal shading.
    Smooth,
    /// Canopy-like high-frequency bumps plus grain.
    Speckle,
    /// Roof stripes with a dark outline.
    Stripes,
    /// Bright dashed centre line along the object axis.
    Dashes,
    /// White grain.
    Grain,
    /// Regular line grid (parking-lot analog).
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeParams {
    pub shape: ShapeKind,
    /// Paint order; higher layers overwrite lower ones.
    pub layer: u8,
    pub presence_prob: f64,
    /// Inclusive object-count range when present.
    pub count: (u32, u32),
    /// Radius (blob), side length (rect) or width (strip) range in pixels.
    pub size: (f64, f64),
    /// Base reflectance per channel; cycled when shorter than the channel count.
    pub color: Vec<f32>,
    pub texture: TextureKind,
    pub texture_amplitude: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub name: String,
    pub params: ShapeParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub patch_size: usize,
    pub channels: usize,
    pub class_spec: Vec<ClassSpec>,
    pub pretrain_class_map: ClassMap,
    pub pretrain_class_names: Vec<String>,
}

fn class(name: &str, params: ShapeParams) -> ClassSpec {
    ClassSpec { name: name.to_string(), params }
}

#[allow(clippy::too_many_arguments)]
fn shape(
    shape: ShapeKind,
    layer: u8,
    presence_prob: f64,
    count: (u32, u32),
    size: (f64, f64),
    color: [f32; 4],
    texture: TextureKind,
    texture_amplitude: f32,
) -> ShapeParams {
    ShapeParams { shape, layer, presence_prob, count, size, color: color.to_vec(), texture, texture_amplitude }
}

impl Default for SceneConfig {
    /// 64 px, four channels (NIR, R, G, B) and an eight-class legend mapped
    /// onto background / trees / buildings / roads for pretraining.
    fn default() -> Self {
        use ShapeKind::*;
        use TextureKind::*;
        let class_spec = vec![
            class("background", shape(Background, 0, 1.0, (0, 0), (1.0, 1.0), [0.36, 0.34, 0.35, 0.33], Smooth, 0.06)),
            class("trees", shape(Blob, 5, 0.7, (2, 6), (3.0, 7.0), [0.52, 0.22, 0.31, 0.22], Speckle, 0.14)),
            class("grass", shape(Blob, 1, 0.6, (1, 2), (10.0, 22.0), [0.50, 0.27, 0.37, 0.25], Smooth, 0.04)),
            class("bareland", shape(Blob, 1, 0.35, (1, 1), (8.0, 16.0), [0.41, 0.44, 0.38, 0.30], Grain, 0.07)),
            class("water", shape(Blob, 1, 0.25, (1, 1), (10.0, 20.0), [0.08, 0.12, 0.18, 0.28], Smooth, 0.03)),
            class("buildings", shape(Rect, 4, 0.7, (1, 4), (6.0, 16.0), [0.44, 0.47, 0.45, 0.45], Stripes, 0.09)),
            class("roads", shape(Strip, 3, 0.6, (1, 2), (4.0, 8.0), [0.28, 0.30, 0.30, 0.31], Dashes, 0.28)),
            class("other_impervious", shape(Rect, 2, 0.4, (1, 1), (10.0, 24.0), [0.33, 0.35, 0.34, 0.34], Grid, 0.12)),
        ];
        SceneConfig {
            patch_size: 64,
            channels: 4,
            class_spec,
            pretrain_class_map: ClassMap { targets: vec![0, 1, 0, 0, 0, 2, 3, 0], num_targets: 4 },
            pretrain_class_names: ["background", "trees", "buildings", "roads"].map(String::from).to_vec(),
        }
    }
}

impl SceneConfig {
    pub fn num_classes(&self) -> usize {
        self.class_spec.len()
    }

    pub fn num_pretrain_classes(&self) -> usize {
        self.pretrain_class_map.num_targets as usize
    }

    pub fn class_names(&self) -> Vec<String> {
        self.class_spec.iter().map(|c| c.name.clone()).collect()
    }

    /// Single-class scene (background only).
    pub fn background_only(patch_size: usize) -> Self {
        let default = SceneConfig::default();
        SceneConfig {
            patch_size,
            channels: default.channels,
            class_spec: vec![default.class_spec[0].clone()],
            pretrain_class_map: ClassMap::identity(1),
            pretrain_class_names: vec!["background".into()],
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.patch_size < 4 || self.patch_size > u16::MAX as usize {
            return Err(DataError::config("patch_size", format!("{} outside 4..=65535", self.patch_size)));
        }
        if self.channels == 0 || self.channels > u16::MAX as usize {
            return Err(DataError::config("channels", format!("{} outside 1..=65535", self.channels)));
        }
        if self.class_spec.is_empty() || self.class_spec.len() > u8::MAX as usize {
            return Err(DataError::config("class_spec", "need between 1 and 255 classes"));
        }
        if self.class_spec[0].params.shape != ShapeKind::Background {
            return Err(DataError::config("class_spec[0]", "class 0 must be the background"));
        }
        for (i, c) in self.class_spec.iter().enumerate() {
            let p = &c.params;
            let field = |f: &str| format!("class_spec[{i}].{f}");
            if i > 0 && p.shape == ShapeKind::Background {
                return Err(DataError::config(field("shape"), "only class 0 may be background"));
            }
            if !(0.0..=1.0).contains(&p.presence_prob) {
                return Err(DataError::config(field("presence_prob"), "must lie in [0,1]"));
            }
            if p.count.0 > p.count.1 {
                return Err(DataError::config(field("count"), "min exceeds max"));
            }
            if !(p.size.0 > 0.0 && p.size.0 <= p.size.1 && p.size.1.is_finite()) {
                return Err(DataError::config(field("size"), "need 0 < min <= max"));
            }
            if p.color.is_empty() || p.color.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(DataError::config(field("color"), "need at least one value, all in [0,1]"));
            }
            if !(p.texture_amplitude >= 0.0 && p.texture_amplitude.is_finite()) {
                return Err(DataError::config(field("texture_amplitude"), "must be finite and >= 0"));
            }
        }
        if self.pretrain_class_map.targets.len() != self.class_spec.len() {
            return Err(DataError::config(
                "pretrain_class_map",
                format!(
                    "covers {} classes, class_spec has {}",
                    self.pretrain_class_map.targets.len(),
                    self.class_spec.len()
                ),
            ));
        }
        self.pretrain_class_map.validate()?;
        if self.pretrain_class_names.len() != self.pretrain_class_map.num_targets as usize {
            return Err(DataError::config("pretrain_class_names", "length must equal the pretraining class count"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct SceneObject {
    class: u8,
    cx: f64,
    cy: f64,
    theta: f64,
    a: f64,
    b: f64,
    wobble_phase: f64,
    phase: (f64, f64),
    freq: f64,
}

impl SceneObject {
    fn local(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.theta.sin_cos();
        (dx * c + dy * s, -dx * s + dy * c)
    }

    fn contains(&self, kind: ShapeKind, x: f64, y: f64) -> bool {
        let (u, v) = self.local(x, y);
        match kind {
            ShapeKind::Background => false,
            ShapeKind::Blob => {
                let ang = v.atan2(u);
                let r = 1.0 + 0.15 * (3.0 * ang + self.wobble_phase).sin();
                (u / self.a).powi(2) + (v / self.b).powi(2) <= r * r
            }
            ShapeKind::Rect => u.abs() <= self.a * 0.5 && v.abs() <= self.b * 0.5,
            ShapeKind::Strip => v.abs() <= self.a * 0.5,
        }
    }
}

fn draw_object(rng: &mut Rng, class: u8, p: &ShapeParams, n: f64) -> SceneObject {
    let size = |rng: &mut Rng| {
        if p.size.1 > p.size.0 {
            rng.random_range(p.size.0..=p.size.1)
        } else {
            p.size.0
        }
    };
    let margin = 0.1 * n;
    let cx = rng.random_range(-margin..n + margin);
    let cy = rng.random_range(-margin..n + margin);
    let theta = rng.random_range(0.0..std::f64::consts::PI);
    let a = size(rng);
    let b = size(rng);
    let wobble_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let phase = (rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.0..std::f64::consts::TAU));
    let freq = rng.random_range(0.04..0.08);
    SceneObject { class, cx, cy, theta, a, b, wobble_phase, phase, freq }
}

/// Deterministic synthetic `(image, exact_mask)` pair for `seed`.
pub fn generate_scene(config: &SceneConfig, seed: u64) -> Result<(Image, ClassMask), DataError> {
    generate_scene_variant(config, seed, 0)
}

/// Like [`generate_scene`], with `variant` selecting a co-registered
/// appearance (season analog): the geometry and mask are shared by all
/// variants of a seed, only illumination and per-channel response change.
pub fn generate_scene_variant(config: &SceneConfig, seed: u64, variant: u16) -> Result<(Image, ClassMask), DataError> {
    config.validate()?;
    let n = config.patch_size;
    let k = config.class_spec.len() as u8;
    let mut geo = seeded(derive(seed, GEOMETRY_STREAM));

    let mut order: Vec<usize> = (1..config.class_spec.len()).collect();
    order.sort_by_key(|&i| (config.class_spec[i].params.layer, i));

    let mut objects = Vec::new();
    for &ci in &order {
        let p = &config.class_spec[ci].params;
        if geo.random::<f64>() < p.presence_prob {
            let count = geo.random_range(p.count.0..=p.count.1);
            for _ in 0..count {
                objects.push(draw_object(&mut geo, ci as u8, p, n as f64));
            }
        }
    }
    let background = draw_object(&mut geo, 0, &config.class_spec[0].params, n as f64);

    // Later objects overwrite earlier ones; `owner` holds object index + 1.
    let mut owner = vec![0u32; n * n];
    for (oi, obj) in objects.iter().enumerate() {
        let kind = config.class_spec[obj.class as usize].params.shape;
        for y in 0..n {
            for x in 0..n {
                if obj.contains(kind, x as f64 + 0.5, y as f64 + 0.5) {
                    owner[y * n + x] = oi as u32 + 1;
                }
            }
        }
    }
    let mask_data: Vec<u8> = owner
        .iter()
        .map(|&o| if o == 0 { 0 } else { objects[o as usize - 1].class })
        .collect();

    let mut app = seeded(derive(derive(seed, APPEARANCE_STREAM), variant as u64));
    let gains: Vec<f64> = (0..config.channels).map(|_| app.random_range(0.85..1.15)).collect();
    let offsets: Vec<f64> = (0..config.channels).map(|_| app.random_range(-0.03..0.03)).collect();
    let mut pix = seeded(derive(derive(seed, PIXEL_NOISE_STREAM), variant as u64));
    let normal = Normal::new(0.0, PIXEL_NOISE_STD).expect("valid std");

    let is_edge = |y: usize, x: usize| {
        let o = owner[y * n + x];
        let nb = [(y.wrapping_sub(1), x), (y + 1, x), (y, x.wrapping_sub(1)), (y, x + 1)];
        nb.iter().any(|&(yy, xx)| yy < n && xx < n && owner[yy * n + xx] != o)
    };

    let mut image = Image::zeros(config.channels, n, n);
    for y in 0..n {
        for x in 0..n {
            let o = owner[y * n + x];
            let obj = if o == 0 { &background } else { &objects[o as usize - 1] };
            let p = &config.class_spec[obj.class as usize].params;
            let grain: f64 = pix.random_range(-1.0..1.0);
            let t = texture(p, obj, x as f64 + 0.5, y as f64 + 0.5, grain, is_edge(y, x) && o != 0);
            for c in 0..config.channels {
                let base = p.color[c % p.color.len()] as f64;
                // per-channel texture response keeps classes from being
                // separable in any single band
                let resp = 1.0 - 0.25 * (c % 2) as f64;
                let v = (base + resp * t) * gains[c] + offsets[c] + normal.sample(&mut pix);
                *image.at_mut(c, y, x) = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    Ok((image, ClassMask { height: n, width: n, num_classes: k, data: mask_data }))
}

fn texture(p: &ShapeParams, obj: &SceneObject, x: f64, y: f64, grain: f64, edge: bool) -> f64 {
    use std::f64::consts::TAU;
    let amp = p.texture_amplitude as f64;
    let (u, v) = obj.local(x, y);
    match p.texture {
        TextureKind::Smooth => {
            amp * (TAU * obj.freq * u + obj.phase.0).sin() + 0.3 * amp * grain
        }
        TextureKind::Speckle => {
            let s = (TAU * 0.33 * x + obj.phase.0).sin() * (TAU * 0.33 * y + obj.phase.1).sin();
            amp * (0.7 * s + 0.5 * grain)
        }
        TextureKind::Stripes => {
            if edge {
                -1.5 * amp
            } else {
                amp * (TAU * 0.25 * u + obj.phase.0).sin().signum() * 0.6 + 0.2 * amp * grain
            }
        }
        TextureKind::Dashes => {
            let dash = (u + 64.0).rem_euclid(8.0) < 4.0;
            let line = if v.abs() < 1.0 && dash { amp } else { 0.0 };
            line + 0.15 * amp * grain
        }
        TextureKind::Grain => amp * grain,
        TextureKind::Grid => {
            let gx = (x + obj.phase.0).rem_euclid(6.0) < 1.0;
            let gy = (y + obj.phase.1).rem_euclid(6.0) < 1.0;
            let line = if gx || gy { amp } else { 0.0 };
            line + 0.3 * amp * grain
        }
    }
}
