//! Degradation model `D(x) = JPEG_q((x * k) downsampled by s + n_sigma)`.
//!
//! The same operator synthesises low-quality observations and sits inside the
//! fidelity loss, where it is differentiated with respect to the image.

mod jpeg;
mod kernel;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use jpeg::{chroma_table, luma_table, scaled_table, soft_jpeg};
pub use kernel::gaussian_kernel;

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::numerics::resample::resize_bicubic;
use crate::numerics::{Array, Padding, Tape, Var};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Kernel {
    Identity(IdentityTag),
    Array(Array<f64>),
}

/// Serialises as the string `"identity"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IdentityTag {
    #[serde(rename = "identity")]
    Identity,
}

impl Kernel {
    pub fn identity() -> Self {
        Self::Identity(IdentityTag::Identity)
    }

    pub fn gaussian(size: usize, sigma: f64) -> Result<Self> {
        Ok(Self::Array(gaussian_kernel(size, sigma)?))
    }

    pub fn is_identity(&self) -> bool {
        match self {
            Self::Identity(_) => true,
            Self::Array(k) => k.shape() == [1, 1] && k.data()[0] == 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Downsample {
    /// Mean over `s x s` tiles. Differentiable.
    #[default]
    Box,
    /// Antialiased bicubic. Synthesis only.
    Bicubic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationSpec {
    pub kernel: Kernel,
    pub scale: usize,
    #[serde(default)]
    pub downsample: Downsample,
    /// Standard deviation in `[0, 1]` value units.
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub noise_seed: u64,
    /// `None` disables compression.
    #[serde(default)]
    pub jpeg_quality: Option<u32>,
    /// Add noise when applying the operator. Off inside the fidelity loss.
    #[serde(default)]
    pub noise_in_forward: bool,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        Self::identity()
    }
}

impl DegradationSpec {
    pub fn identity() -> Self {
        Self {
            kernel: Kernel::identity(),
            scale: 1,
            downsample: Downsample::Box,
            noise_sigma: 0.0,
            noise_seed: 0,
            jpeg_quality: None,
            noise_in_forward: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Kernel::Array(k) = &self.kernel {
            match *k.shape() {
                [kh, kw] if kh % 2 == 1 && kw % 2 == 1 => {}
                _ => {
                    return Err(Error::invalid(format!(
                        "kernel must be 2-D with odd dims, got {:?}",
                        k.shape()
                    )))
                }
            }
            if k.data().iter().any(|&v| v < 0.0) {
                return Err(Error::invalid("kernel entries must be nonnegative"));
            }
            if (k.sum() - 1.0).abs() > 1e-12 {
                return Err(Error::invalid(format!("kernel must sum to 1, sums to {}", k.sum())));
            }
        }
        if self.scale == 0 {
            return Err(Error::invalid("scale must be positive"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid(format!("noise sigma must be >= 0, got {}", self.noise_sigma)));
        }
        if let Some(q) = self.jpeg_quality {
            if !(1..=100).contains(&q) {
                return Err(Error::invalid(format!("JPEG quality must be in 1..=100, got {q}")));
            }
        }
        Ok(())
    }

    /// Output size for an `h x w` input, checking divisibility.
    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        if !h.is_multiple_of(self.scale) || !w.is_multiple_of(self.scale) {
            return Err(Error::invalid(format!(
                "scale {} must divide image size {h}x{w}",
                self.scale
            )));
        }
        let (oh, ow) = (h / self.scale, w / self.scale);
        if self.jpeg_quality.is_some() && (oh % 8 != 0 || ow % 8 != 0) {
            return Err(Error::invalid(format!(
                "JPEG needs the downsampled size {oh}x{ow} to be a multiple of 8"
            )));
        }
        Ok((oh, ow))
    }

    /// The seeded noise field for an output of the given shape.
    pub fn noise_field<T: Real>(&self, shape: &[usize]) -> Array<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.noise_seed);
        let sigma = self.noise_sigma;
        Array::from_fn(shape, |_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            T::lit(sigma * z)
        })
        .expect("finite noise")
    }
}

/// Applies the degradation operator to an image on a tape.
pub fn degrade_var<'t, T: Real>(image: Var<'t, T>, spec: &DegradationSpec) -> Result<Var<'t, T>> {
    let shape = image.shape();
    let (h, w) = match *shape.as_slice() {
        [h, w, _] => (h, w),
        _ => return Err(Error::invalid(format!("degrade needs an [H, W, C] image, got {shape:?}"))),
    };
    let (oh, ow) = spec.output_dims(h, w)?;
    let tape = image.tape();

    let mut x = image;
    if let Kernel::Array(k) = &spec.kernel {
        if !spec.kernel.is_identity() {
            x = x.conv2d(tape.constant(k.cast()), Padding::SameZero)?;
        }
    }
    if spec.scale > 1 {
        x = match spec.downsample {
            Downsample::Box => x.area_downsample(spec.scale)?,
            Downsample::Bicubic => {
                if x.requires_grad() {
                    return Err(Error::invalid(
                        "bicubic downsampling is synthesis-only and cannot be differentiated",
                    ));
                }
                tape.constant(resize_bicubic(&x.value(), oh, ow)?)
            }
        };
    }
    if spec.noise_in_forward && spec.noise_sigma > 0.0 {
        let noise = spec.noise_field::<T>(&x.shape());
        x = x.add(tape.constant(noise))?;
    }
    if let Some(q) = spec.jpeg_quality {
        x = soft_jpeg(x, q)?;
    }
    Ok(x)
}

/// Synthesises a low-quality observation. The result is clipped to `[0, 1]`,
/// as it would be on export.
pub fn degrade<T: Real>(image: &ImageBuffer<T>, spec: &DegradationSpec) -> Result<ImageBuffer<T>> {
    let tape = Tape::new();
    let out = degrade_var(tape.constant(image.as_array().clone()), spec)?;
    ImageBuffer::clipped(out.value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> ImageBuffer<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageBuffer::new(Array::from_fn(&[h, w, 3], |_| rng.random::<f64>()).unwrap()).unwrap()
    }

    #[test]
    fn identity_spec_is_bitwise_identity() {
        let img = random_image(8, 8, 1);
        let out = degrade(&img, &DegradationSpec::identity()).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn constant_downsample() {
        let img = ImageBuffer::new(Array::full(&[2, 2, 1], 0.3f64)).unwrap();
        let spec = DegradationSpec {
            scale: 2,
            ..DegradationSpec::identity()
        };
        let out = degrade(&img, &spec).unwrap();
        assert_eq!(out.dims(), (1, 1, 1));
        assert!((out.as_array().data()[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn linear_without_noise_and_jpeg() {
        let spec = DegradationSpec {
            kernel: Kernel::gaussian(5, 1.1).unwrap(),
            scale: 2,
            ..DegradationSpec::identity()
        };
        let (a, b) = (random_image(16, 16, 2), random_image(16, 16, 3));
        let (alpha, beta) = (0.3, -1.7);
        let tape = Tape::<f64>::new();
        let combo = a
            .as_array()
            .zip_map(b.as_array(), |x, y| alpha * x + beta * y)
            .unwrap();
        let lhs = degrade_var(tape.constant(combo), &spec).unwrap().value();
        let da = degrade_var(tape.constant(a.as_array().clone()), &spec).unwrap().value();
        let db = degrade_var(tape.constant(b.as_array().clone()), &spec).unwrap().value();
        for ((l, x), y) in lhs.data().iter().zip(da.data()).zip(db.data()) {
            assert!((l - (alpha * x + beta * y)).abs() < 1e-10);
        }
    }

    #[test]
    fn blur_and_box_keep_unit_range() {
        let spec = DegradationSpec {
            kernel: Kernel::gaussian(7, 2.0).unwrap(),
            scale: 4,
            ..DegradationSpec::identity()
        };
        for seed in 0..5 {
            let tape = Tape::<f64>::new();
            let img = random_image(16, 16, seed);
            let out = degrade_var(tape.constant(img.into_array()), &spec).unwrap().value();
            assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let spec = DegradationSpec {
            scale: 2,
            noise_sigma: 0.05,
            noise_seed: 11,
            noise_in_forward: true,
            ..DegradationSpec::identity()
        };
        let img = random_image(16, 16, 4);
        assert_eq!(degrade(&img, &spec).unwrap(), degrade(&img, &spec).unwrap());
        let other = DegradationSpec {
            noise_seed: 12,
            ..spec.clone()
        };
        assert_ne!(degrade(&img, &spec).unwrap(), degrade(&img, &other).unwrap());
        let silent = DegradationSpec {
            noise_in_forward: false,
            ..spec
        };
        let clean = DegradationSpec {
            noise_sigma: 0.0,
            ..silent.clone()
        };
        assert_eq!(degrade(&img, &silent).unwrap(), degrade(&img, &clean).unwrap());
    }

    #[test]
    fn divisibility_errors() {
        let img = random_image(12, 12, 5);
        let spec = DegradationSpec {
            scale: 5,
            ..DegradationSpec::identity()
        };
        assert!(degrade(&img, &spec).is_err());
        let jpeg = DegradationSpec {
            scale: 2,
            jpeg_quality: Some(75),
            ..DegradationSpec::identity()
        };
        assert!(degrade(&img, &jpeg).is_err());
    }

    #[test]
    fn bicubic_refuses_gradients() {
        let spec = DegradationSpec {
            scale: 2,
            downsample: Downsample::Bicubic,
            ..DegradationSpec::identity()
        };
        let tape = Tape::<f64>::new();
        let x = tape.var(Array::full(&[8, 8, 3], 0.5));
        assert!(degrade_var(x, &spec).is_err());
        let img = random_image(8, 8, 6);
        assert_eq!(degrade(&img, &spec).unwrap().dims(), (4, 4, 3));
    }

    #[test]
    fn json_field_names() {
        let spec = DegradationSpec {
            kernel: Kernel::gaussian(3, 0.5).unwrap(),
            scale: 4,
            downsample: Downsample::Box,
            noise_sigma: 0.03,
            noise_seed: 7,
            jpeg_quality: Some(75),
            noise_in_forward: true,
        };
        let v = serde_json::to_value(&spec).unwrap();
        for key in ["kernel", "scale", "downsample", "noise_sigma", "noise_seed", "jpeg_quality", "noise_in_forward"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        let back: DegradationSpec = serde_json::from_value(v).unwrap();
        assert_eq!(back, spec);
        let ident: DegradationSpec =
            serde_json::from_str(r#"{"kernel":"identity","scale":1}"#).unwrap();
        assert_eq!(ident, DegradationSpec::identity());
    }
}
