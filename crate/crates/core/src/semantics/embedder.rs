use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Embedding;
use crate::error::{Error, Result};
use crate::generator::{load_decoder, MlpDecoder};
use crate::image::ImageBuffer;
use crate::numerics::{Array, NumericsError, Tape, Var};
use crate::scalar::Real;

/// Pre-activation gain of the toy projection.
const TOY_GAIN: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EmbedderSpec {
    /// Bilinear resize to `resolution x resolution`, a seeded random
    /// projection to `dim` values, `tanh`, then unit normalisation.
    Toy { resolution: usize, dim: usize, seed: u64 },
    /// A decoder-file network applied to the resized image, then unit
    /// normalisation.
    External { resolution: usize, weights: PathBuf },
}

impl EmbedderSpec {
    pub fn toy(seed: u64) -> Self {
        Self::Toy {
            resolution: 32,
            dim: 16,
            seed,
        }
    }

    pub fn resolution(&self) -> usize {
        match self {
            Self::Toy { resolution, .. } | Self::External { resolution, .. } => *resolution,
        }
    }
}

#[derive(Debug, Clone)]
enum Net<T> {
    /// `[r * r * 3, m]`, every column zero-mean so constant images embed to zero.
    Toy(Array<T>),
    External(MlpDecoder<T>),
}

/// Differentiable image embedding standing in for a recognition network.
#[derive(Debug, Clone)]
pub struct Embedder<T = f64> {
    spec: EmbedderSpec,
    net: Net<T>,
}

impl Embedder<f64> {
    pub fn from_spec(spec: &EmbedderSpec) -> Result<Self> {
        let r = spec.resolution();
        if r == 0 {
            return Err(Error::invalid("embedder resolution must be positive"));
        }
        let inputs = r * r * 3;
        let net = match spec {
            EmbedderSpec::Toy { dim, seed, .. } => {
                if *dim == 0 {
                    return Err(Error::invalid("embedding dimension must be positive"));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let mut p: Vec<f64> = (0..inputs * dim).map(|_| rng.sample(StandardNormal)).collect();
                let scale = TOY_GAIN / (inputs as f64).sqrt();
                for j in 0..*dim {
                    let mean = (0..inputs).map(|i| p[i * dim + j]).sum::<f64>() / inputs as f64;
                    (0..inputs).for_each(|i| p[i * dim + j] = (p[i * dim + j] - mean) * scale);
                }
                Net::Toy(Array::new(vec![inputs, *dim], p)?)
            }
            EmbedderSpec::External { weights, .. } => {
                let net = load_decoder(weights)?;
                if net.inputs() != inputs {
                    return Err(Error::invalid(format!(
                        "embedder network takes {} inputs, resolution {r} gives {inputs}",
                        net.inputs()
                    )));
                }
                Net::External(net)
            }
        };
        Ok(Self {
            spec: spec.clone(),
            net,
        })
    }
}

impl<T: Real> Embedder<T> {
    pub fn cast<U: Real>(&self) -> Embedder<U> {
        Embedder {
            spec: self.spec.clone(),
            net: match &self.net {
                Net::Toy(p) => Net::Toy(p.cast()),
                Net::External(n) => Net::External(n.cast()),
            },
        }
    }

    pub fn spec(&self) -> &EmbedderSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        match &self.net {
            Net::Toy(p) => p.shape()[1],
            Net::External(n) => n.outputs(),
        }
    }

    /// Unit-norm embedding `[m]` of an `[H, W, 3]` image on a tape.
    pub fn embed_var<'t>(&self, image: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = image.shape();
        let r = self.spec.resolution();
        let resized = match *shape.as_slice() {
            [h, w, 3] if h == r && w == r => image,
            [_, _, 3] => image.resize_bilinear(r, r)?,
            _ => return Err(Error::invalid(format!("embedder needs an [H, W, 3] image, got {shape:?}"))),
        };
        let flat = resized.reshape(&[1, r * r * 3])?;
        let raw = match &self.net {
            Net::Toy(p) => flat.matmul(image.tape().constant(p.clone()))?.tanh()?,
            Net::External(n) => n.forward(flat)?,
        };
        let m = self.dim();
        raw.reshape(&[m])?.l2_normalize().map_err(|e| match e {
            NumericsError::DegenerateVector { norm, .. } => Error::DegenerateEmbedding { norm },
            other => other.into(),
        })
    }

    pub fn embed(&self, image: &ImageBuffer<T>) -> Result<Embedding<T>> {
        let tape = Tape::new();
        let e = self.embed_var(tape.constant(image.as_array().clone()))?;
        Embedding::new(e.value())
    }
}
