//! Image buffers and 8-bit PNG exchange.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Array;
use crate::scalar::Real;

/// `[H, W, C]` image with every channel value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer<T> {
    pixels: Array<T>,
}

impl<T: Real> ImageBuffer<T> {
    pub fn new(pixels: Array<T>) -> Result<Self> {
        if pixels.ndim() != 3 {
            return Err(Error::invalid(format!(
                "image must be [H, W, C], got {:?}",
                pixels.shape()
            )));
        }
        if let Some(v) = pixels
            .data()
            .iter()
            .find(|&&v| v < T::zero() || v > T::one())
        {
            return Err(Error::invalid(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { pixels })
    }

    /// Clamps every value into `[0, 1]`.
    pub fn clipped(pixels: Array<T>) -> Result<Self> {
        let clamped = pixels.map(|v| v.max(T::zero()).min(T::one()))?;
        Self::new(clamped)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Result<Self> {
        Self::new(Array::full(&[height, width, channels], value))
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.pixels.shape()[2]
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height(), self.width(), self.channels())
    }

    pub fn as_array(&self) -> &Array<T> {
        &self.pixels
    }

    pub fn into_array(self) -> Array<T> {
        self.pixels
    }

    pub fn cast<U: Real>(&self) -> ImageBuffer<U> {
        ImageBuffer {
            pixels: self.pixels.cast(),
        }
    }

    /// Rec. 601 luma of an RGB image as an `[H, W]` array.
    pub fn luma(&self) -> Result<Array<T>> {
        if self.channels() != 3 {
            return Err(Error::invalid("luma needs an RGB image"));
        }
        let (r, g, b) = (T::lit(0.299), T::lit(0.587), T::lit(0.114));
        let data = self
            .pixels
            .data()
            .chunks_exact(3)
            .map(|p| r * p[0] + g * p[1] + b * p[2])
            .collect();
        Ok(Array::new(vec![self.height(), self.width()], data)?)
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an RGB image as 8-bit PNG.
pub fn save_png<T: Real>(image: &ImageBuffer<T>, path: &Path) -> Result<()> {
    let (h, w, c) = image.dims();
    if c != 3 {
        return Err(Error::invalid(format!("PNG export needs 3 channels, got {c}")));
    }
    let bytes: Vec<u8> = image
        .as_array()
        .data()
        .iter()
        .map(|v| quantize(v.to_f64_lossy()))
        .collect();
    ::image::save_buffer(path, &bytes, w as u32, h as u32, ::image::ColorType::Rgb8).map_err(|source| {
        Error::Image {
            path: path.to_path_buf(),
            source,
        }
    })
}

/// Encodes an RGB image as 8-bit PNG bytes.
pub fn encode_png<T: Real>(image: &ImageBuffer<T>) -> Result<Vec<u8>> {
    use ::image::ImageEncoder;
    let (h, w, c) = image.dims();
    if c != 3 {
        return Err(Error::invalid(format!("PNG export needs 3 channels, got {c}")));
    }
    let bytes: Vec<u8> = image
        .as_array()
        .data()
        .iter()
        .map(|v| quantize(v.to_f64_lossy()))
        .collect();
    let mut out = Vec::new();
    ::image::codecs::png::PngEncoder::new(&mut out)
        .write_image(&bytes, w as u32, h as u32, ::image::ExtendedColorType::Rgb8)
        .map_err(|source| Error::Image {
            path: "<memory>".into(),
            source,
        })?;
    Ok(out)
}

/// Reads any PNG as RGB scaled to `[0, 1]`.
pub fn load_png(path: &Path) -> Result<ImageBuffer<f64>> {
    let img = ::image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
    ImageBuffer::new(Array::new(vec![h as usize, w as usize, 3], data)?)
}

/// Reads a PNG as a single-channel `[H, W]` array in `[0, 1]`.
pub fn load_gray_png(path: &Path) -> Result<Array<f64>> {
    let img = ::image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_luma8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
    Ok(Array::new(vec![h as usize, w as usize], data)?)
}

pub fn save_gray_png(mask: &Array<f64>, path: &Path) -> Result<()> {
    let (h, w) = match *mask.shape() {
        [h, w] => (h, w),
        _ => return Err(Error::invalid("mask must be [H, W]")),
    };
    let bytes: Vec<u8> = mask.data().iter().map(|&v| quantize(v)).collect();
    ::image::save_buffer(path, &bytes, w as u32, h as u32, ::image::ColorType::L8).map_err(|source| {
        Error::Image {
            path: path.to_path_buf(),
            source,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_out_of_range() {
        assert!(ImageBuffer::new(Array::full(&[2, 2, 3], 1.5)).is_err());
        assert!(ImageBuffer::new(Array::full(&[4, 3], 0.5)).is_err());
        let c = ImageBuffer::clipped(Array::new(vec![1, 2, 1], vec![-0.1, 1.2]).unwrap()).unwrap();
        assert_eq!(c.as_array().data(), &[0.0, 1.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn png_round_trip_within_one_level(data in prop::collection::vec(0.0f64..=1.0, 5 * 4 * 3)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("x.png");
            let img = ImageBuffer::new(Array::new(vec![5, 4, 3], data).unwrap()).unwrap();
            save_png(&img, &path).unwrap();
            let back = load_png(&path).unwrap();
            prop_assert_eq!(back.dims(), (5, 4, 3));
            for (a, b) in img.as_array().data().iter().zip(back.as_array().data()) {
                prop_assert!((a - b).abs() <= 1.0 / 255.0);
            }
        }
    }
}
