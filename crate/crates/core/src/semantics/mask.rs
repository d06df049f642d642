use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{load_gray_png, ImageBuffer};
use crate::numerics::resample::resize_bilinear;
use crate::numerics::Array;

/// Source of the per-pixel weights used by the histogram loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MaskProvider {
    Full,
    /// Single-channel 8-bit PNG scaled to `[0, 1]`, resized to the image.
    File { path: PathBuf },
    /// 1 where luma exceeds `tau`, else 0.
    LumaThreshold { tau: f64 },
}

impl MaskProvider {
    /// `[H, W]` mask for `image`.
    pub fn mask_for(&self, image: &ImageBuffer<f64>) -> Result<Array<f64>> {
        let (h, w, _) = image.dims();
        let mask = match self {
            Self::Full => Array::full(&[h, w], 1.0),
            Self::File { path } => resize_mask(&load_gray_png(path)?, h, w)?,
            Self::LumaThreshold { tau } => {
                if !tau.is_finite() {
                    return Err(Error::invalid(format!("luma threshold must be finite, got {tau}")));
                }
                image.luma()?.map(|y| if y > *tau { 1.0 } else { 0.0 })?
            }
        };
        validate_mask(&mask)?;
        Ok(mask)
    }
}

/// Checks that a mask is `[H, W]`, within `[0, 1]` and has positive weight.
pub fn validate_mask(mask: &Array<f64>) -> Result<()> {
    if mask.ndim() != 2 {
        return Err(Error::invalid(format!("mask must be [H, W], got {:?}", mask.shape())));
    }
    if mask.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid("mask values must lie in [0, 1]"));
    }
    if mask.sum() <= 0.0 {
        return Err(Error::invalid("mask has zero total weight"));
    }
    Ok(())
}

/// Bilinear resize of an `[H, W]` mask; values stay in `[0, 1]`.
pub fn resize_mask(mask: &Array<f64>, h: usize, w: usize) -> Result<Array<f64>> {
    if mask.ndim() != 2 {
        return Err(Error::invalid(format!("mask must be [H, W], got {:?}", mask.shape())));
    }
    if mask.shape() == [h, w] {
        return Ok(mask.clone());
    }
    let (mh, mw) = (mask.shape()[0], mask.shape()[1]);
    let resized = resize_bilinear(&mask.reshape(&[mh, mw, 1])?, h, w)?;
    Ok(resized.reshape(&[h, w])?.map(|v| v.clamp(0.0, 1.0))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::save_gray_png;

    #[test]
    fn full_mask() {
        let img = ImageBuffer::filled(4, 6, 3, 0.2).unwrap();
        let m = MaskProvider::Full.mask_for(&img).unwrap();
        assert_eq!(m.shape(), &[4, 6]);
        assert_eq!(m.sum(), 24.0);
    }

    #[test]
    fn luma_threshold() {
        let img = ImageBuffer::new(
            Array::from_fn(&[2, 2, 3], |i| if i / 3 == 0 { 0.9 } else { 0.1 }).unwrap(),
        )
        .unwrap();
        let m = MaskProvider::LumaThreshold { tau: 0.5 }.mask_for(&img).unwrap();
        assert_eq!(m.data(), &[1.0, 0.0, 0.0, 0.0]);
        assert!(MaskProvider::LumaThreshold { tau: 0.95 }.mask_for(&img).is_err());
    }

    #[test]
    fn file_mask_is_resized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.png");
        save_gray_png(&Array::from_fn(&[4, 4], |i| if i % 4 < 2 { 1.0 } else { 0.0 }).unwrap(), &path).unwrap();
        let img = ImageBuffer::filled(8, 8, 3, 0.5).unwrap();
        let m = MaskProvider::File { path }.mask_for(&img).unwrap();
        assert_eq!(m.shape(), &[8, 8]);
        assert_eq!(m.get(&[0, 0]), Some(1.0));
        assert_eq!(m.get(&[0, 7]), Some(0.0));
    }

    #[test]
    fn json_form() {
        let p: MaskProvider = serde_json::from_str(r#"{"kind":"luma-threshold","tau":0.3}"#).unwrap();
        assert_eq!(p, MaskProvider::LumaThreshold { tau: 0.3 });
        let f: MaskProvider = serde_json::from_str(r#"{"kind":"full"}"#).unwrap();
        assert_eq!(f, MaskProvider::Full);
    }

    #[test]
    fn validation() {
        assert!(validate_mask(&Array::zeros(&[2, 2])).is_err());
        assert!(validate_mask(&Array::full(&[2, 2], 1.5)).is_err());
        assert!(validate_mask(&Array::full(&[4], 1.0)).is_err());
        assert!(validate_mask(&Array::full(&[2, 2], 0.25)).is_ok());
    }
}
