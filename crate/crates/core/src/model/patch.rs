use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `height × width × channels` image stored row-major with interleaved channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageInput {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pixels: Vec<f64>,
    pub patch: usize,
}

impl ImageInput {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f64>, patch: usize) -> Result<Self> {
        if pixels.len() != height * width * channels {
            return Err(Error::Dimension(format!(
                "{}x{}x{} image needs {} pixels, got {}",
                height,
                width,
                channels,
                height * width * channels,
                pixels.len()
            )));
        }
        let img = Self { height, width, channels, pixels, patch };
        img.check()?;
        Ok(img)
    }

    fn check(&self) -> Result<()> {
        if self.patch == 0 || !self.height.is_multiple_of(self.patch) || !self.width.is_multiple_of(self.patch) {
            return Err(Error::InvalidInput(format!(
                "{}x{} image is not divisible into {}x{} patches",
                self.height, self.width, self.patch, self.patch
            )));
        }
        Ok(())
    }

    /// Patch grid as `(rows, cols)`.
    pub fn grid(&self) -> (usize, usize) {
        (self.height / self.patch, self.width / self.patch)
    }

    pub fn n_patches(&self) -> usize {
        let (r, c) = self.grid();
        r * c
    }

    pub fn patch_len(&self) -> usize {
        self.patch * self.patch * self.channels
    }

    #[inline]
    fn px(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }
}

/// Splits an image into non-overlapping patches in raster order.
///
/// Each patch is flattened row by row with channels interleaved, giving
/// vectors of length `P²·C`.
pub fn patchify(img: &ImageInput) -> Result<Vec<Vec<f64>>> {
    img.check()?;
    let p = img.patch;
    let (gr, gc) = img.grid();
    let mut out = Vec::with_capacity(gr * gc);
    for pr in 0..gr {
        for pc in 0..gc {
            let mut v = Vec::with_capacity(img.patch_len());
            for dy in 0..p {
                for dx in 0..p {
                    for c in 0..img.channels {
                        v.push(img.pixels[img.px(pr * p + dy, pc * p + dx, c)]);
                    }
                }
            }
            out.push(v);
        }
    }
    Ok(out)
}

/// Inverse of [`patchify`].
pub fn unpatchify(
    patches: &[Vec<f64>],
    height: usize,
    width: usize,
    channels: usize,
    patch: usize,
) -> Result<ImageInput> {
    let mut img = ImageInput {
        height,
        width,
        channels,
        pixels: vec![0.0; height * width * channels],
        patch,
    };
    img.check()?;
    let (gr, gc) = img.grid();
    if patches.len() != gr * gc || patches.iter().any(|p| p.len() != img.patch_len()) {
        return Err(Error::Dimension("patch count or length does not match the image".into()));
    }
    for (idx, v) in patches.iter().enumerate() {
        let (pr, pc) = (idx / gc, idx % gc);
        let mut it = v.iter();
        for dy in 0..patch {
            for dx in 0..patch {
                for c in 0..channels {
                    let at = img.px(pr * patch + dy, pc * patch + dx, c);
                    img.pixels[at] = *it.next().unwrap();
                }
            }
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize, c: usize, p: usize) -> ImageInput {
        ImageInput::new(h, w, c, (0..h * w * c).map(|v| v as f64).collect(), p).unwrap()
    }

    #[test]
    fn four_by_four_into_four_patches() {
        let patches = patchify(&ramp(4, 4, 1, 2)).unwrap();
        assert_eq!(patches.len(), 4);
        assert!(patches.iter().all(|p| p.len() == 4));
        assert_eq!(patches[0], vec![0.0, 1.0, 4.0, 5.0]);
        assert_eq!(patches[1], vec![2.0, 3.0, 6.0, 7.0]);
    }

    #[test]
    fn whole_image_patch() {
        let img = ramp(3, 3, 2, 3);
        let patches = patchify(&img).unwrap();
        assert_eq!(patches, vec![img.pixels.clone()]);
    }

    #[test]
    fn round_trip_six_by_four_rgb() {
        let img = ramp(6, 4, 3, 2);
        let patches = patchify(&img).unwrap();
        assert_eq!(patches.len(), 6);
        assert!(patches.iter().all(|p| p.len() == 12));
        assert_eq!(unpatchify(&patches, 6, 4, 3, 2).unwrap(), img);
    }

    #[test]
    fn rejects_indivisible() {
        assert!(ImageInput::new(5, 4, 1, vec![0.0; 20], 2).is_err());
    }
}
