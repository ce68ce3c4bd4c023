//! Grayscale and binary image containers plus synthetic test images.
//!
//! Pixels are stored row-major; `(row, col)` addresses a pixel and `row * width + col`
//! is its flat index. Gray levels use the full 8-bit range `0..=255`.

use crate::error::{Error, Result};

/// Largest gray level.
pub const L: u8 = 255;

/// Continuous-tone input image with levels in `0..=255`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} image needs {} samples, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, level: u8) -> Self {
        Self {
            width,
            height,
            data: vec![level; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                data.push(f(row, col));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }
}

/// Binary halftone: every sample is exactly 0 (ink) or 255 (paper).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} image needs {} samples, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|&&v| v != 0 && v != 255) {
            return Err(Error::InvalidArgument(format!(
                "binary image sample {bad} is neither 0 nor 255"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn white(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![255; width * height],
        }
    }

    /// Builds an image from an ink map (`true` = black dot).
    pub fn from_ink(width: usize, height: usize, ink: impl IntoIterator<Item = bool>) -> Self {
        let data: Vec<u8> = ink.into_iter().map(|b| if b { 0 } else { 255 }).collect();
        assert_eq!(data.len(), width * height, "ink map size");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    pub fn is_ink(&self, row: usize, col: usize) -> bool {
        self.get(row, col) == 0
    }

    pub fn black_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 0).count()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Ink coverage per pixel: 1.0 for a black dot, 0.0 for paper.
    pub fn ink_values(&self) -> Vec<f64> {
        self.data
            .iter()
            .map(|&v| if v == 0 { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.clone(),
        }
    }

    /// Circular shift by `(dr, dc)`: output pixel `(r, c)` takes input `(r - dr, c - dc)`.
    pub fn torus_shift(&self, dr: usize, dc: usize) -> Self {
        let (w, h) = (self.width, self.height);
        let mut data = vec![0u8; w * h];
        for r in 0..h {
            for c in 0..w {
                data[((r + dr) % h) * w + (c + dc) % w] = self.data[r * w + c];
            }
        }
        Self {
            width: w,
            height: h,
            data,
        }
    }
}

impl GrayImage {
    /// Promotes a gray image that happens to be binary.
    pub fn to_binary(&self) -> Result<BinaryImage> {
        BinaryImage::new(self.width, self.height, self.data.clone())
    }

    pub fn torus_shift(&self, dr: usize, dc: usize) -> Self {
        let (w, h) = (self.width, self.height);
        let mut data = vec![0u8; w * h];
        for r in 0..h {
            for c in 0..w {
                data[((r + dr) % h) * w + (c + dc) % w] = self.data[r * w + c];
            }
        }
        Self {
            width: w,
            height: h,
            data,
        }
    }
}

pub fn constant_patch(level: u8, width: usize, height: usize) -> GrayImage {
    GrayImage::filled(width, height, level)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RampDirection {
    Horizontal,
    Vertical,
}

/// Tone ramp: column `j` (or row, when vertical) holds `floor(j * 256 / extent)`.
pub fn ramp(width: usize, height: usize, direction: RampDirection) -> Result<GrayImage> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(format!(
            "ramp dimensions must be nonzero, got {width}x{height}"
        )));
    }
    let level = |pos: usize, extent: usize| ((pos * 256) / extent).min(255) as u8;
    Ok(match direction {
        RampDirection::Horizontal => GrayImage::from_fn(width, height, |_, c| level(c, width)),
        RampDirection::Vertical => GrayImage::from_fn(width, height, |r, _| level(r, height)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_patch_values() {
        let p = constant_patch(64, 512, 512);
        assert_eq!(p.width(), 512);
        assert!(p.data().iter().all(|&v| v == 64));
        assert_eq!(p.mean(), 64.0);
        assert_eq!(constant_patch(0, 1, 1).data(), &[0]);
        assert_eq!(constant_patch(255, 4, 4).data(), &[255; 16]);
    }

    #[test]
    fn ramp_covers_all_tones() {
        let r = ramp(768, 128, RampDirection::Horizontal).unwrap();
        assert_eq!(r.get(0, 0), 0);
        assert_eq!(r.get(127, 767), 255);

        let r = ramp(256, 1, RampDirection::Horizontal).unwrap();
        let expected: Vec<u8> = (0..=255).collect();
        assert_eq!(r.data(), expected.as_slice());

        let r = ramp(512, 2, RampDirection::Horizontal).unwrap();
        for c in 0..512 {
            assert_eq!(r.get(0, c), (c / 2) as u8);
            assert_eq!(r.get(1, c), (c / 2) as u8);
        }
    }

    #[test]
    fn ramp_rejects_zero_dims() {
        assert!(ramp(0, 10, RampDirection::Horizontal).is_err());
        assert!(ramp(10, 0, RampDirection::Vertical).is_err());
    }

    #[test]
    fn binary_rejects_gray_samples() {
        assert!(BinaryImage::new(2, 1, vec![0, 128]).is_err());
        assert!(BinaryImage::new(2, 1, vec![0]).is_err());
        assert!(BinaryImage::new(2, 1, vec![0, 255]).is_ok());
    }

    proptest! {
        #[test]
        fn ramp_is_monotone(w in 1usize..600, h in 1usize..8) {
            let r = ramp(w, h, RampDirection::Horizontal).unwrap();
            for row in 0..h {
                for c in 1..w {
                    prop_assert!(r.get(row, c) >= r.get(row, c - 1));
                }
            }
            let v = ramp(h, w, RampDirection::Vertical).unwrap();
            for row in 1..w {
                prop_assert!(v.get(row, 0) >= v.get(row - 1, 0));
            }
        }
    }
}
