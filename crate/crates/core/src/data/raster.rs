use serde::{Deserialize, Serialize};

use super::DataError;

/// Multi-channel image raster, channel-major (`[C, H, W]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Image { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f32 {
        &mut self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

/// Per-pixel class indices over a declared class count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMask {
    pub height: usize,
    pub width: usize,
    pub num_classes: u8,
    pub data: Vec<u8>,
}

impl ClassMask {
    pub fn filled(height: usize, width: usize, num_classes: u8, value: u8) -> Self {
        ClassMask { height, width, num_classes, data: vec![value; height * width] }
    }

    pub fn from_rows(rows: &[&[u8]], num_classes: u8) -> Self {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        ClassMask { height, width, num_classes, data }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.data.len() != self.height * self.width {
            return Err(DataError::InvalidPatch(format!(
                "mask length {} != {}x{}",
                self.data.len(),
                self.height,
                self.width
            )));
        }
        if let Some(v) = self.data.iter().find(|&&v| v >= self.num_classes) {
            return Err(DataError::InvalidPatch(format!(
                "mask value {v} not below class count {}",
                self.num_classes
            )));
        }
        Ok(())
    }

    /// Nearest-neighbour resampling to `height x width`.
    pub fn resample_nearest(&self, height: usize, width: usize) -> ClassMask {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            let sy = (((y as f64 + 0.5) * self.height as f64 / height as f64) as usize).min(self.height - 1);
            for x in 0..width {
                let sx = (((x as f64 + 0.5) * self.width as f64 / width as f64) as usize).min(self.width - 1);
                data.push(self.data[sy * self.width + sx]);
            }
        }
        ClassMask { height, width, num_classes: self.num_classes, data }
    }
}

/// Surjection from exact classes onto the pretraining (noisy) class set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMap {
    pub targets: Vec<u8>,
    pub num_targets: u8,
}

impl ClassMap {
    pub fn identity(k: u8) -> Self {
        ClassMap { targets: (0..k).collect(), num_targets: k }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.targets.is_empty() {
            return Err(DataError::config("pretrain_class_map", "empty map"));
        }
        if self.targets[0] != 0 {
            return Err(DataError::config("pretrain_class_map", "class 0 (background) must map to 0"));
        }
        let mut hit = vec![false; self.num_targets as usize];
        for (i, &t) in self.targets.iter().enumerate() {
            if t >= self.num_targets {
                return Err(DataError::config(
                    "pretrain_class_map",
                    format!("exact class {i} maps to {t}, outside 0..{}", self.num_targets),
                ));
            }
            hit[t as usize] = true;
        }
        if let Some(miss) = hit.iter().position(|h| !h) {
            return Err(DataError::config(
                "pretrain_class_map",
                format!("target class {miss} has no preimage"),
            ));
        }
        Ok(())
    }

    pub fn apply(&self, mask: &ClassMask) -> ClassMask {
        ClassMask {
            height: mask.height,
            width: mask.width,
            num_classes: self.num_targets,
            data: mask.data.iter().map(|&v| self.targets[v as usize]).collect(),
        }
    }
}

/// One training sample: image, exact mask and noisy mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchTriple {
    pub image: Image,
    pub exact_mask: ClassMask,
    pub noisy_mask: ClassMask,
    pub variant_id: u16,
    pub seed: u64,
}

impl PatchTriple {
    pub fn height(&self) -> usize {
        self.image.height
    }

    pub fn width(&self) -> usize {
        self.image.width
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let (h, w) = (self.image.height, self.image.width);
        if self.image.data.len() != self.image.channels * h * w {
            return Err(DataError::InvalidPatch("image length does not match C*H*W".into()));
        }
        for (name, m) in [("exact", &self.exact_mask), ("noisy", &self.noisy_mask)] {
            if m.height != h || m.width != w {
                return Err(DataError::InvalidPatch(format!(
                    "{name} mask is {}x{}, image is {h}x{w}",
                    m.height, m.width
                )));
            }
            m.validate()?;
        }
        if let Some(v) = self.image.data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(DataError::InvalidPatch(format!("image value {v} outside [0,1]")));
        }
        Ok(())
    }
}
