//! `.nlp` patch container.
//!
//! Little-endian layout:
//!
//! | field      | type            |
//! |------------|-----------------|
//! | magic      | `b"NLPT"`       |
//! | version    | u8 (= 1)        |
//! | channels   | u16             |
//! | height     | u16             |
//! | width      | u16             |
//! | k_exact    | u8              |
//! | k_noisy    | u8              |
//! | variant_id | u16             |
//! | seed       | u64             |
//! | image      | C·H·W × f32     |
//! | exact mask | H·W × u8        |
//! | noisy mask | H·W × u8        |

use std::path::Path;

use super::raster::{ClassMask, Image, PatchTriple};
use super::DataError;

pub const NLP_MAGIC: &[u8; 4] = b"NLPT";
pub const NLP_VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 2 + 2 + 2 + 1 + 1 + 2 + 8;

fn narrow<T: TryFrom<usize>>(value: usize, what: &str) -> Result<T, DataError> {
    T::try_from(value).map_err(|_| DataError::DimensionOverflow(format!("{what} = {value} does not fit its header field")))
}

pub fn write_patch_bytes(triple: &PatchTriple) -> Result<Vec<u8>, DataError> {
    triple.validate()?;
    let img = &triple.image;
    let channels: u16 = narrow(img.channels, "channels")?;
    let height: u16 = narrow(img.height, "height")?;
    let width: u16 = narrow(img.width, "width")?;
    let mut out = Vec::with_capacity(HEADER_LEN + img.data.len() * 4 + 2 * img.height * img.width);
    out.extend_from_slice(NLP_MAGIC);
    out.push(NLP_VERSION);
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&height.to_le_bytes());
    out.extend_from_slice(&width.to_le_bytes());
    out.push(triple.exact_mask.num_classes);
    out.push(triple.noisy_mask.num_classes);
    out.extend_from_slice(&triple.variant_id.to_le_bytes());
    out.extend_from_slice(&triple.seed.to_le_bytes());
    for v in &img.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&triple.exact_mask.data);
    out.extend_from_slice(&triple.noisy_mask.data);
    Ok(out)
}

pub fn read_patch_bytes(bytes: &[u8]) -> Result<PatchTriple, DataError> {
    if bytes.len() < 4 || &bytes[..4] != NLP_MAGIC {
        return Err(DataError::BadMagic { found: bytes[..bytes.len().min(4)].to_vec() });
    }
    if bytes.len() < HEADER_LEN {
        return Err(DataError::Truncated { expected: HEADER_LEN, found: bytes.len() });
    }
    if bytes[4] != NLP_VERSION {
        return Err(DataError::VersionMismatch { found: bytes[4], expected: NLP_VERSION });
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]) as usize;
    let channels = u16_at(5);
    let height = u16_at(7);
    let width = u16_at(9);
    let k_exact = bytes[11];
    let k_noisy = bytes[12];
    let variant_id = u16_at(13) as u16;
    let seed = u64::from_le_bytes(bytes[15..23].try_into().expect("8 bytes"));

    let plane = height
        .checked_mul(width)
        .ok_or_else(|| DataError::DimensionOverflow("height*width".into()))?;
    let image_bytes = plane
        .checked_mul(channels)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| DataError::DimensionOverflow("channels*height*width".into()))?;
    let expected = HEADER_LEN + image_bytes + 2 * plane;
    if bytes.len() < expected {
        return Err(DataError::Truncated { expected, found: bytes.len() });
    }
    if bytes.len() > expected {
        return Err(DataError::InvalidPatch(format!("{} trailing bytes", bytes.len() - expected)));
    }
    let mut o = HEADER_LEN;
    let data = bytes[o..o + image_bytes]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    o += image_bytes;
    let exact = bytes[o..o + plane].to_vec();
    o += plane;
    let noisy = bytes[o..o + plane].to_vec();
    let triple = PatchTriple {
        image: Image { channels, height, width, data },
        exact_mask: ClassMask { height, width, num_classes: k_exact, data: exact },
        noisy_mask: ClassMask { height, width, num_classes: k_noisy, data: noisy },
        variant_id,
        seed,
    };
    triple.validate()?;
    Ok(triple)
}

pub fn write_patch(triple: &PatchTriple, path: &Path) -> Result<(), DataError> {
    let bytes = write_patch_bytes(triple)?;
    std::fs::write(path, bytes).map_err(|e| DataError::io(path, e))
}

pub fn read_patch(path: &Path) -> Result<PatchTriple, DataError> {
    let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
    read_patch_bytes(&bytes)
}
