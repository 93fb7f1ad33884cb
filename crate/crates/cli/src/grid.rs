//! Dominant-component image grid: one row per model, one column per module.

use std::io::Cursor;

use image::{GrayImage, ImageFormat, Luma};

use crate::error::{CliError, ErrorKind};

pub struct GridTile {
    pub height: usize,
    pub width: usize,
    /// Row-major values in `[0, 1]`.
    pub pixels: Vec<f64>,
}

const GAP: u32 = 2;

/// Tiles are nearest-neighbour scaled to `tile x tile` and separated by a
/// white gap. Rows may have different lengths.
pub fn pc_grid_png(rows: &[Vec<GridTile>], tile: usize) -> Result<Vec<u8>, CliError> {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0).max(1) as u32;
    let t = tile as u32;
    let w = cols * t + (cols + 1) * GAP;
    let h = rows.len().max(1) as u32 * (t + GAP) + GAP;
    let mut img = GrayImage::from_pixel(w, h, Luma([255]));
    for (r, row) in rows.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            let (x0, y0) = (GAP + c as u32 * (t + GAP), GAP + r as u32 * (t + GAP));
            for y in 0..tile {
                let sy = y * cell.height / tile;
                for x in 0..tile {
                    let sx = x * cell.width / tile;
                    let v = cell.pixels[sy * cell.width + sx].clamp(0.0, 1.0);
                    img.put_pixel(x0 + x as u32, y0 + y as u32, Luma([(v * 255.0).round() as u8]));
                }
            }
        }
    }
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).map_err(|e| CliError::new(ErrorKind::Internal, format!("png encoding: {e}")))?;
    Ok(out.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_geometry_and_values() {
        let a = GridTile { height: 2, width: 2, pixels: vec![0.0, 1.0, 1.0, 0.0] };
        let b = GridTile { height: 1, width: 1, pixels: vec![0.5] };
        let png = pc_grid_png(&[vec![a, b]], 4).unwrap();
        let img = image::load_from_memory(&png).unwrap().to_luma8();
        assert_eq!(img.dimensions(), (2 * 4 + 3 * GAP, 4 + 2 * GAP));
        assert_eq!(img.get_pixel(GAP, GAP)[0], 0);
        assert_eq!(img.get_pixel(GAP + 2, GAP)[0], 255);
        assert_eq!(img.get_pixel(2 * GAP + 4 + 3, GAP + 3)[0], 128);
        assert_eq!(img.get_pixel(0, 0)[0], 255);
    }
}
