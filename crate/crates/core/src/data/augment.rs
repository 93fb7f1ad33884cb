use rand::Rng as _;

use super::raster::{ClassMask, Image, PatchTriple};
use super::DataError;
use crate::rng::seeded;

fn flip_image(img: &Image, horizontal: bool, vertical: bool) -> Image {
    let (h, w) = (img.height, img.width);
    let mut out = Image::zeros(img.channels, h, w);
    for c in 0..img.channels {
        for y in 0..h {
            let sy = if vertical { h - 1 - y } else { y };
            for x in 0..w {
                let sx = if horizontal { w - 1 - x } else { x };
                *out.at_mut(c, y, x) = img.at(c, sy, sx);
            }
        }
    }
    out
}

fn flip_mask(m: &ClassMask, horizontal: bool, vertical: bool) -> ClassMask {
    let (h, w) = (m.height, m.width);
    let mut data = Vec::with_capacity(h * w);
    for y in 0..h {
        let sy = if vertical { h - 1 - y } else { y };
        for x in 0..w {
            let sx = if horizontal { w - 1 - x } else { x };
            data.push(m.at(sy, sx));
        }
    }
    ClassMask { data, ..*m }
}

/// Flips image and both masks together. Horizontal reverses the width axis.
pub fn flip_triple(t: &PatchTriple, horizontal: bool, vertical: bool) -> PatchTriple {
    PatchTriple {
        image: flip_image(&t.image, horizontal, vertical),
        exact_mask: flip_mask(&t.exact_mask, horizontal, vertical),
        noisy_mask: flip_mask(&t.noisy_mask, horizontal, vertical),
        variant_id: t.variant_id,
        seed: t.seed,
    }
}

/// Selects one of `variants` uniformly (when non-empty), then applies
/// independent horizontal and vertical flips with probability 0.5 each.
pub fn augment(triple: &PatchTriple, variants: &[PatchTriple], seed: u64) -> Result<PatchTriple, DataError> {
    let dims = |t: &PatchTriple| (t.image.channels, t.image.height, t.image.width);
    for v in variants {
        if dims(v) != dims(triple) {
            return Err(DataError::VariantShape { expected: dims(triple), found: dims(v) });
        }
    }
    let mut rng = seeded(seed);
    let base = if variants.is_empty() {
        triple
    } else {
        &variants[rng.random_range(0..variants.len())]
    };
    let horizontal = rng.random_bool(0.5);
    let vertical = rng.random_bool(0.5);
    Ok(flip_triple(base, horizontal, vertical))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(variant: u16) -> PatchTriple {
        let (c, h, w) = (2, 3, 4);
        PatchTriple {
            image: Image { channels: c, height: h, width: w, data: (0..c * h * w).map(|i| i as f32 / 100.0 + variant as f32 * 0.1).collect() },
            exact_mask: ClassMask { height: h, width: w, num_classes: 12, data: (0..12).collect() },
            noisy_mask: ClassMask { height: h, width: w, num_classes: 12, data: (0..12).rev().collect() },
            variant_id: variant,
            seed: 1,
        }
    }

    fn flips_for(seed: u64) -> (bool, bool) {
        let mut rng = seeded(seed);
        (rng.random_bool(0.5), rng.random_bool(0.5))
    }

    #[test]
    fn identity_seed() {
        let seed = (0..).find(|&s| flips_for(s) == (false, false)).unwrap();
        let t = sample(0);
        assert_eq!(augment(&t, &[], seed).unwrap(), t);
    }

    #[test]
    fn horizontal_flip_relation() {
        let seed = (0..).find(|&s| flips_for(s) == (true, false)).unwrap();
        let t = sample(0);
        let a = augment(&t, &[], seed).unwrap();
        for y in 0..3 {
            for x in 0..4 {
                for c in 0..2 {
                    assert_eq!(a.image.at(c, y, x), t.image.at(c, y, 3 - x));
                }
                assert_eq!(a.exact_mask.at(y, x), t.exact_mask.at(y, 3 - x));
                assert_eq!(a.noisy_mask.at(y, x), t.noisy_mask.at(y, 3 - x));
            }
        }
    }

    #[test]
    fn double_flip_is_identity() {
        let t = sample(0);
        assert_eq!(flip_triple(&flip_triple(&t, true, true), true, true), t);
    }

    #[test]
    fn variant_selection_is_uniform() {
        let variants: Vec<PatchTriple> = (0..4).map(sample).collect();
        let mut counts = [0usize; 4];
        for seed in 0..10_000u64 {
            let a = augment(&variants[0], &variants, seed).unwrap();
            counts[a.variant_id as usize] += 1;
        }
        for c in counts {
            assert!((2350..=2650).contains(&c), "{counts:?}");
        }
    }

    #[test]
    fn variant_shape_mismatch() {
        let t = sample(0);
        let mut v = sample(1);
        v.image.channels = 1;
        v.image.data.truncate(12);
        assert!(matches!(augment(&t, &[v], 0), Err(DataError::VariantShape { .. })));
    }
}
