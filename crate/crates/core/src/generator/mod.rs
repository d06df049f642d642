//! Differentiable generators mapping a latent code `w` (an `L x d` matrix) to
//! an `[H, W, 3]` image, and optimisation-based inversion.

pub mod decoder;
mod invert;
mod synthetic;

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use decoder::{load_decoder, save_decoder, Activation, DenseLayer, MlpDecoder};
pub use invert::{invert, InversionConfig, InversionResult};
pub use synthetic::random_orthonormal;

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::json::read_json;
use crate::numerics::{Array, Tape, Var};
use crate::scalar::Real;

/// A point in the extended latent space; flattening is row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Array<T>", into = "Array<T>")]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct LatentCode<T = f64> {
    array: Array<T>,
}

impl<T: Real> LatentCode<T> {
    pub fn new(array: Array<T>) -> Result<Self> {
        if array.ndim() != 2 {
            return Err(Error::invalid(format!("latent code must be L x d, got shape {:?}", array.shape())));
        }
        Ok(Self { array })
    }

    pub fn from_flat(shape: [usize; 2], data: Vec<T>) -> Result<Self> {
        Self::new(Array::new(shape.to_vec(), data)?)
    }

    pub fn zeros(shape: [usize; 2]) -> Self {
        Self {
            array: Array::zeros(&shape),
        }
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.array.shape()[0], self.array.shape()[1]]
    }

    pub fn flatten(&self) -> &[T] {
        self.array.data()
    }

    pub fn len(&self) -> usize {
        self.array.len()
    }

    pub fn is_empty(&self) -> bool {
        self.array.is_empty()
    }

    pub fn as_array(&self) -> &Array<T> {
        &self.array
    }

    pub fn into_array(self) -> Array<T> {
        self.array
    }

    pub fn cast<U: Real>(&self) -> LatentCode<U> {
        LatentCode {
            array: self.array.cast(),
        }
    }
}

impl<T: Real> TryFrom<Array<T>> for LatentCode<T> {
    type Error = Error;

    fn try_from(array: Array<T>) -> Result<Self> {
        Self::new(array)
    }
}

impl<T> From<LatentCode<T>> for Array<T> {
    fn from(code: LatentCode<T>) -> Self {
        code.array
    }
}

/// I.i.d. standard normal latent of the given shape.
pub fn sample_latent<T: Real, R: Rng + ?Sized>(shape: [usize; 2], rng: &mut R) -> LatentCode<T> {
    let data = (0..shape[0] * shape[1])
        .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    LatentCode::from_flat(shape, data).expect("positive latent shape")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedDirection {
    pub name: String,
    /// Unit vector of length `L * d`.
    pub direction: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub latent_shape: [usize; 2],
    pub output_shape: [usize; 3],
    pub seed: u64,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_detail")]
    pub detail: usize,
    #[serde(default = "default_detail_tile")]
    pub detail_tile: usize,
    #[serde(default)]
    pub planted: Vec<PlantedDirection>,
}

fn default_hidden() -> usize {
    64
}

fn default_detail() -> usize {
    16
}

fn default_detail_tile() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderFileSpec {
    pub latent_shape: [usize; 2],
    pub output_shape: [usize; 3],
    /// Little-endian `f64` stream; the JSON sidecar sits at the same path
    /// with a `.json` extension.
    pub weights: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GeneratorSpec {
    Synthetic(SyntheticSpec),
    DecoderFile(DecoderFileSpec),
}

impl GeneratorSpec {
    /// Desk-scale synthetic generator: `8 x 32` latents, `64 x 64` RGB output,
    /// `planted` orthonormal attribute directions named `attr0`, `attr1`, ...
    pub fn desk(seed: u64, planted: usize) -> Result<Self> {
        let latent_shape = [8, 32];
        let dirs = random_orthonormal(latent_shape[0] * latent_shape[1], planted, seed ^ 0x5eed)?;
        Ok(Self::Synthetic(SyntheticSpec {
            latent_shape,
            output_shape: [64, 64, 3],
            seed,
            hidden: default_hidden(),
            detail: default_detail(),
            detail_tile: default_detail_tile(),
            planted: dirs
                .into_iter()
                .enumerate()
                .map(|(i, direction)| PlantedDirection {
                    name: format!("attr{i}"),
                    direction,
                })
                .collect(),
        }))
    }

    /// Reads a spec, resolving a relative weights path against the spec's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut spec: Self = read_json(path)?;
        if let Self::DecoderFile(f) = &mut spec {
            if f.weights.is_relative() {
                if let Some(dir) = path.parent() {
                    f.weights = dir.join(&f.weights);
                }
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn latent_shape(&self) -> [usize; 2] {
        match self {
            Self::Synthetic(s) => s.latent_shape,
            Self::DecoderFile(f) => f.latent_shape,
        }
    }

    pub fn output_shape(&self) -> [usize; 3] {
        match self {
            Self::Synthetic(s) => s.output_shape,
            Self::DecoderFile(f) => f.output_shape,
        }
    }

    pub fn planted(&self) -> &[PlantedDirection] {
        match self {
            Self::Synthetic(s) => &s.planted,
            Self::DecoderFile(_) => &[],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [l, d] = self.latent_shape();
        if l == 0 || d == 0 {
            return Err(Error::invalid(format!("latent shape must be positive, got {l}x{d}")));
        }
        let [h, w, c] = self.output_shape();
        if c != 3 {
            return Err(Error::invalid(format!("generator output must have 3 channels, got {c}")));
        }
        if h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 {
            return Err(Error::invalid(format!("output size {h}x{w} must be a positive multiple of 8")));
        }
        let planted = self.planted();
        for p in planted {
            if p.direction.len() != l * d {
                return Err(Error::invalid(format!(
                    "planted direction {:?} has length {}, expected {}",
                    p.name,
                    p.direction.len(),
                    l * d
                )));
            }
            let norm = p.direction.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("planted direction {:?} has norm {norm}", p.name)));
            }
        }
        for (i, a) in planted.iter().enumerate() {
            for b in &planted[i + 1..] {
                let dot: f64 = a.direction.iter().zip(&b.direction).map(|(x, y)| x * y).sum();
                if dot.abs() > 1.0 - 1e-9 {
                    return Err(Error::invalid(format!(
                        "planted directions {:?} and {:?} coincide",
                        a.name, b.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A generator instance: the spec plus its materialised decoder weights.
#[derive(Debug, Clone)]
pub struct Generator<T = f64> {
    spec: GeneratorSpec,
    decoder: MlpDecoder<T>,
}

impl Generator<f64> {
    pub fn from_spec(spec: &GeneratorSpec) -> Result<Self> {
        spec.validate()?;
        let decoder = match spec {
            GeneratorSpec::Synthetic(s) => synthetic::build(s)?,
            GeneratorSpec::DecoderFile(f) => load_decoder(&f.weights)?,
        };
        let [l, d] = spec.latent_shape();
        let [h, w, c] = spec.output_shape();
        if decoder.inputs() != l * d || decoder.outputs() != h * w * c {
            return Err(Error::invalid(format!(
                "decoder maps {} -> {} values, spec needs {} -> {}",
                decoder.inputs(),
                decoder.outputs(),
                l * d,
                h * w * c
            )));
        }
        let last = &decoder.layers()[decoder.layers().len() - 1];
        if last.activation != Activation::Sigmoid {
            return Err(Error::invalid("decoder must end in a sigmoid so images stay in [0, 1]"));
        }
        Ok(Self {
            spec: spec.clone(),
            decoder,
        })
    }
}

impl<T: Real> Generator<T> {
    pub fn cast<U: Real>(&self) -> Generator<U> {
        Generator {
            spec: self.spec.clone(),
            decoder: self.decoder.cast(),
        }
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn decoder(&self) -> &MlpDecoder<T> {
        &self.decoder
    }

    pub fn latent_shape(&self) -> [usize; 2] {
        self.spec.latent_shape()
    }

    pub fn output_shape(&self) -> [usize; 3] {
        self.spec.output_shape()
    }

    pub fn sample_latent<R: Rng + ?Sized>(&self, rng: &mut R) -> LatentCode<T> {
        sample_latent(self.latent_shape(), rng)
    }

    /// `G(w)` on a tape. `w` may have any shape with `L * d` entries.
    pub fn generate_var<'t>(&self, w: Var<'t, T>) -> Result<Var<'t, T>> {
        let [l, d] = self.latent_shape();
        let got = w.shape();
        if got.iter().product::<usize>() != l * d {
            return Err(Error::invalid(format!("latent has shape {got:?}, generator expects {l}x{d}")));
        }
        let [h, wd, c] = self.output_shape();
        Ok(self.decoder.forward(w)?.reshape(&[h, wd, c])?)
    }

    pub fn generate(&self, w: &LatentCode<T>) -> Result<ImageBuffer<T>> {
        if w.shape() != self.latent_shape() {
            return Err(Error::invalid(format!(
                "latent has shape {:?}, generator expects {:?}",
                w.shape(),
                self.latent_shape()
            )));
        }
        let tape = Tape::new();
        let img = self.generate_var(tape.constant(w.as_array().clone()))?;
        ImageBuffer::new(img.value())
    }
}
