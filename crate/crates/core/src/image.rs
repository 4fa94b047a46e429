//! Floating-point RGB image buffers and their PNG / binary-PPM codecs.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to decode image: {0}")]
    Decode(String),
    #[error("image has zero width or height")]
    Empty,
    #[error("pixel count {got} does not match {width}x{height}")]
    Shape { width: u32, height: u32, got: usize },
}

/// Row-major RGB image with `f32` channels, row 0 at the top.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbBuffer {
    width: u32,
    height: u32,
    data: Vec<[f32; 3]>,
}

impl RgbBuffer {
    pub fn new(width: u32, height: u32, data: Vec<[f32; 3]>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Empty);
        }
        if data.len() != width as usize * height as usize {
            return Err(ImageError::Shape { width, height, got: data.len() });
        }
        Ok(Self { width, height, data })
    }

    pub fn solid(width: u32, height: u32, color: [f32; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be nonzero");
        Self { width, height, data: vec![color; width as usize * height as usize] }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [f32; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be nonzero");
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[[f32; 3]] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [[f32; 3]] {
        &mut self.data
    }

    pub fn into_pixels(self) -> Vec<[f32; 3]> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [f32; 3] {
        self.data[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, c: [f32; 3]) {
        let w = self.width;
        self.data[(y * w + x) as usize] = c;
    }

    /// Per-channel mean over all pixels.
    pub fn mean(&self) -> [f64; 3] {
        let mut acc = [0.0f64; 3];
        for p in &self.data {
            for c in 0..3 {
                acc[c] += p[c] as f64;
            }
        }
        let n = self.data.len() as f64;
        [acc[0] / n, acc[1] / n, acc[2] / n]
    }

    /// Decode PNG or binary PPM (format sniffed from the bytes).
    pub fn decode(bytes: &[u8]) -> Result<Self, ImageError> {
        let img = image::load_from_memory(bytes).map_err(|e| ImageError::Decode(e.to_string()))?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn load(path: &Path) -> Result<Self, ImageError> {
        let bytes = std::fs::read(path)
            .map_err(|source| ImageError::Io { path: path.display().to_string(), source })?;
        Self::decode(&bytes)
    }

    fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        Self::from_fn(w, h, |x, y| {
            let p = img.get_pixel(x, y).0;
            [p[0] as f32 / 255.0, p[1] as f32 / 255.0, p[2] as f32 / 255.0]
        })
    }

    fn to_rgb8(&self) -> RgbImage {
        let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        RgbImage::from_fn(self.width, self.height, |x, y| {
            let p = self.get(x, y);
            Rgb([q(p[0]), q(p[1]), q(p[2])])
        })
    }

    /// 8-bit PNG encoding (values clamped to `[0, 1]`).
    pub fn to_png(&self) -> Vec<u8> {
        self.encode(ImageFormat::Png)
    }

    /// Binary PPM (P6) encoding.
    pub fn to_ppm(&self) -> Vec<u8> {
        let rgb = self.to_rgb8();
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(rgb.as_raw());
        out
    }

    fn encode(&self, format: ImageFormat) -> Vec<u8> {
        let mut out = Cursor::new(Vec::new());
        self.to_rgb8()
            .write_to(&mut out, format)
            .expect("in-memory image encoding cannot fail");
        out.into_inner()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_and_ppm_round_trip_8bit_values() {
        let img = RgbBuffer::from_fn(5, 3, |x, y| [x as f32 * 51.0 / 255.0, y as f32 / 255.0, 1.0]);
        assert_eq!(RgbBuffer::decode(&img.to_png()).unwrap(), img);
        let ppm = img.to_ppm();
        assert!(ppm.starts_with(b"P6"));
        assert_eq!(RgbBuffer::decode(&ppm).unwrap(), img);
    }

    #[test]
    fn rejects_mismatched_shape() {
        assert!(matches!(RgbBuffer::new(2, 2, vec![[0.0; 3]; 3]), Err(ImageError::Shape { .. })));
        assert!(matches!(RgbBuffer::new(0, 2, vec![]), Err(ImageError::Empty)));
    }
}
