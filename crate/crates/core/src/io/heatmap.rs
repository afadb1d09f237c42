//! Per-token heatmaps as binary PPM images.
//!
//! Colours use a symmetric diverging scale normalised per image: the largest
//! magnitude is fully saturated, zero is white, positive values shade to red
//! and negative ones to blue.

use std::fs;
use std::path::Path;

use crate::cav::SensitivityRecord;
use crate::error::{Error, Result};
use crate::shapley::AttributionResult;

pub const DEFAULT_CELL_PX: usize = 16;
pub const MIDPOINT: [u8; 3] = [255, 255, 255];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// One row of cells, for text.
    Strip { cell_px: usize },
    /// Row-major patch grid, for images.
    Grid { rows: usize, cols: usize, cell_px: usize },
}

impl Layout {
    pub fn strip() -> Self {
        Layout::Strip { cell_px: DEFAULT_CELL_PX }
    }

    pub fn grid(rows: usize, cols: usize) -> Self {
        Layout::Grid { rows, cols, cell_px: DEFAULT_CELL_PX }
    }

    fn shape(&self, n: usize) -> Result<(usize, usize, usize)> {
        let (rows, cols, px) = match *self {
            Layout::Strip { cell_px } => (1, n, cell_px),
            Layout::Grid { rows, cols, cell_px } => (rows, cols, cell_px),
        };
        if rows * cols != n || n == 0 {
            return Err(Error::Dimension(format!("{} values do not fill a {}x{} layout", n, rows, cols)));
        }
        if px == 0 {
            return Err(Error::Config("cell size must be positive".into()));
        }
        Ok((rows, cols, px))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triples.
    pub rgb: Vec<u8>,
}

impl Image {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }
}

/// Colour of `t` in `[-1, 1]`.
pub fn diverging(t: f64) -> [u8; 3] {
    let fade = ((1.0 - t.abs().min(1.0)) * 255.0).round() as u8;
    if t > 0.0 {
        [255, fade, fade]
    } else if t < 0.0 {
        [fade, fade, 255]
    } else {
        MIDPOINT
    }
}

pub fn render(values: &[f64], layout: Layout) -> Result<Image> {
    let (rows, cols, px) = layout.shape(values.len())?;
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("cannot colour non-finite value {}", v)));
    }
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let colours: Vec<[u8; 3]> =
        values.iter().map(|&v| if scale > 0.0 { diverging(v / scale) } else { MIDPOINT }).collect();
    let (width, height) = (cols * px, rows * px);
    let mut rgb = Vec::with_capacity(3 * width * height);
    for y in 0..height {
        for x in 0..width {
            rgb.extend_from_slice(&colours[(y / px) * cols + x / px]);
        }
    }
    Ok(Image { width, height, rgb })
}

pub fn encode_ppm(img: &Image, config_hash: &str) -> Vec<u8> {
    let mut out = format!("P6\n# config_hash {}\n{} {}\n255\n", config_hash, img.width, img.height).into_bytes();
    out.extend_from_slice(&img.rgb);
    out
}

pub fn write_ppm(path: &Path, img: &Image, config_hash: &str) -> Result<()> {
    fs::write(path, encode_ppm(img, config_hash))?;
    Ok(())
}

pub fn emit_attribution(path: &Path, result: &AttributionResult, layout: Layout, config_hash: &str) -> Result<Image> {
    let img = render(&result.scores, layout)?;
    write_ppm(path, &img, config_hash)?;
    Ok(img)
}

/// Drops the CLS position so the cells line up with the original tokens or patches.
pub fn emit_sensitivity(path: &Path, record: &SensitivityRecord, layout: Layout, config_hash: &str) -> Result<Image> {
    let img = render(record.per_token.get(1..).unwrap_or(&[]), layout)?;
    write_ppm(path, &img, config_hash)?;
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_give_uniform_midpoint() {
        let img = render(&[0.0; 5], Layout::Strip { cell_px: 2 }).unwrap();
        assert!(img.rgb.chunks(3).all(|c| c == MIDPOINT));
    }

    #[test]
    fn single_positive_token_marks_one_cell() {
        let img = render(&[0.0, 0.0, 3.0, 0.0], Layout::Strip { cell_px: 1 }).unwrap();
        let marked: Vec<usize> = (0..4).filter(|&x| img.pixel(x, 0) != MIDPOINT).collect();
        assert_eq!(marked, vec![2]);
        assert_eq!(img.pixel(2, 0), [255, 0, 0]);
    }

    #[test]
    fn sign_picks_the_hue() {
        let img = render(&[-2.0, 1.0], Layout::Strip { cell_px: 1 }).unwrap();
        assert_eq!(img.pixel(0, 0), [0, 0, 255]);
        assert_eq!(img.pixel(1, 0), [255, 128, 128]);
    }

    #[test]
    fn four_patch_grid_is_two_by_two() {
        let img = render(&[1.0, -1.0, 0.5, 0.0], Layout::Grid { rows: 2, cols: 2, cell_px: 1 }).unwrap();
        assert_eq!((img.width, img.height), (2, 2));
        assert_eq!(img.pixel(1, 1), MIDPOINT);
        assert_eq!(img.pixel(1, 0), [0, 0, 255]);
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        assert!(matches!(render(&[1.0; 5], Layout::grid(2, 2)), Err(Error::Dimension(_))));
    }

    #[test]
    fn ppm_header_carries_hash() {
        let img = render(&[1.0], Layout::Strip { cell_px: 1 }).unwrap();
        let bytes = encode_ppm(&img, "feed");
        assert!(bytes.starts_with(b"P6\n# config_hash feed\n1 1\n255\n"));
        assert_eq!(&bytes[bytes.len() - 3..], &[255, 0, 0]);
    }
}
