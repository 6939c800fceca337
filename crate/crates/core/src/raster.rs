//! 8-bit RGB raster images.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage};
use sha2::{Digest, Sha256};

use crate::error::DegradationError;

/// Smallest width or height the operators accept.
pub const MIN_EXTENT: u32 = 8;

/// Row-major, interleaved RGB image with 8-bit samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, DegradationError> {
        if width < MIN_EXTENT || height < MIN_EXTENT {
            return Err(DegradationError::UnsupportedImageSize { width, height });
        }
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(DegradationError::BadBuffer {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self, DegradationError> {
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = self.index(x, y);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Samples as `f64`, the working representation inside operators.
    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }

    /// Quantizes a working buffer back to 8 bits (round half up, clamped).
    pub fn from_f64(width: u32, height: u32, buf: &[f64]) -> Self {
        let data = buf.iter().map(|&v| quantize(v)).collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DegradationError> {
        let img = image::load_from_memory(bytes)
            .map_err(|e| DegradationError::ImageDecode(e.to_string()))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        Self::new(w, h, img.into_raw())
    }

    pub fn load(path: &Path) -> Result<Self, DegradationError> {
        let bytes = std::fs::read(path)
            .map_err(|e| DegradationError::ImageDecode(format!("{}: {e}", path.display())))?;
        Self::decode(&bytes)
    }

    pub fn to_png(&self) -> Vec<u8> {
        let img = RgbImage::from_raw(self.width, self.height, self.data.clone())
            .expect("buffer length checked at construction");
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)
            .expect("PNG encoding into memory cannot fail");
        out.into_inner()
    }

    pub fn save_png(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_png())
    }

    /// Hex SHA-256 of the raw sample buffer (dimensions included).
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.width.to_le_bytes());
        h.update(self.height.to_le_bytes());
        h.update(&self.data);
        h.finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Round half up and clamp into `[0, 255]`.
#[inline]
pub fn quantize(v: f64) -> u8 {
    let r = libm::floor(v + 0.5);
    if r.is_nan() || r <= 0.0 {
        0
    } else if r >= 255.0 {
        255
    } else {
        r as u8
    }
}

/// Mean squared error over all samples. Zero iff the images are identical.
pub fn distortion_score(
    original: &RasterImage,
    degraded: &RasterImage,
) -> Result<f64, DegradationError> {
    if original.width != degraded.width || original.height != degraded.height {
        return Err(DegradationError::DimensionMismatch {
            left: (original.width, original.height),
            right: (degraded.width, degraded.height),
        });
    }
    let sum: u64 = original
        .data
        .iter()
        .zip(&degraded.data)
        .map(|(&a, &b)| {
            let d = i64::from(a) - i64::from(b);
            (d * d) as u64
        })
        .sum();
    Ok(sum as f64 / original.data.len() as f64)
}
