//! Single-channel float images on the canonical [0, 255] intensity scale.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImageError {
    #[error("pixel buffer has {actual} values, expected {width}x{height} = {}", width * height)]
    BadLength { width: usize, height: usize, actual: usize },
    #[error("image is {width}x{height}, at least {min}x{min} required")]
    TooSmall { width: usize, height: usize, min: usize },
}

/// Row-major grayscale image. Intensities are stored on the 0..=255 scale
/// regardless of the source bit depth.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        if data.len() != width * height {
            return Err(ImageError::BadLength { width, height, actual: data.len() });
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn from_u8(width: usize, height: usize, pixels: &[u8]) -> Result<Self, ImageError> {
        Self::new(width, height, pixels.iter().map(|&p| p as f32).collect())
    }

    /// 16-bit sources are rescaled onto 0..=255.
    pub fn from_u16(width: usize, height: usize, pixels: &[u16]) -> Result<Self, ImageError> {
        let scale = 255.0 / 65535.0;
        Self::new(width, height, pixels.iter().map(|&p| p as f32 * scale).collect())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn row(&self, y: usize) -> &[f32] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f32) {
        self.data[y * self.width + x] = value;
    }

    /// Replicate-padded access.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f32 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.data[yc * self.width + xc]
    }

    /// Bilinear sample with replicate padding outside the image.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f32 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.get(x0, y0) as f64 * (1.0 - fx) + self.get(x1, y0) as f64 * fx;
        let bottom = self.get(x0, y1) as f64 * (1.0 - fx) + self.get(x1, y1) as f64 * fx;
        (top * (1.0 - fy) + bottom * fy) as f32
    }

    pub fn transposed(&self) -> GrayImage {
        GrayImage::from_fn(self.height, self.width, |x, y| self.get(y, x))
    }

    pub fn ensure_min_size(&self, min: usize) -> Result<(), ImageError> {
        if self.width < min || self.height < min {
            return Err(ImageError::TooSmall { width: self.width, height: self.height, min });
        }
        Ok(())
    }

    /// Quantized copy, clamped to 0..=255.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect()
    }
}
