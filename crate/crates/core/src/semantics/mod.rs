//! Semantic priors: identity agreement through an embedder, movement along an
//! attribute direction, and masked colour-histogram matching.

mod embedder;
mod histogram;
mod mask;

use serde::{Deserialize, Serialize};

pub use embedder::{Embedder, EmbedderSpec};
pub use histogram::{hard_histogram, hist_loss, near_kink, soft_histogram, HistogramParams};
pub use mask::{resize_mask, validate_mask, MaskProvider};

use crate::error::{Error, Result};
use crate::generator::{Generator, LatentCode};
use crate::numerics::{Array, Var};
use crate::scalar::Real;

/// Tolerance on the norm of stored unit vectors.
pub const UNIT_TOLERANCE: f64 = 1e-9;

/// Unit-norm embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<T = f64> {
    vector: Array<T>,
}

impl<T: Real> Embedding<T> {
    pub fn new(vector: Array<T>) -> Result<Self> {
        if vector.ndim() != 1 {
            return Err(Error::invalid(format!("embedding must be 1-D, got {:?}", vector.shape())));
        }
        let norm = vector.norm().to_f64_lossy();
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::invalid(format!("embedding norm is {norm}, expected 1")));
        }
        Ok(Self { vector })
    }

    pub fn as_array(&self) -> &Array<T> {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    /// Inner product, which is the cosine for unit vectors.
    pub fn cosine(&self, other: &Self) -> T {
        self.vector.dot(&other.vector)
    }
}

#[derive(Debug, Clone, Deserialize)]
struct RawDirection {
    name: String,
    direction: Vec<f64>,
    bias: f64,
    accuracy: f64,
}

/// Unit normal of an attribute boundary in flattened latent space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDirection")]
pub struct SemanticDirection {
    pub name: String,
    direction: Vec<f64>,
    pub bias: f64,
    pub accuracy: f64,
}

impl TryFrom<RawDirection> for SemanticDirection {
    type Error = Error;

    fn try_from(raw: RawDirection) -> Result<Self> {
        Self::new(raw.name, raw.direction, raw.bias, raw.accuracy)
    }
}

impl SemanticDirection {
    pub fn new(name: String, direction: Vec<f64>, bias: f64, accuracy: f64) -> Result<Self> {
        if direction.iter().any(|v| !v.is_finite()) || !bias.is_finite() {
            return Err(Error::invalid(format!("direction {name:?} has non-finite entries")));
        }
        let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::invalid(format!("direction {name:?} has norm {norm}, expected 1")));
        }
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(Error::invalid(format!("accuracy {accuracy} is outside [0, 1]")));
        }
        Ok(Self {
            name,
            direction,
            bias,
            accuracy,
        })
    }

    pub fn direction(&self) -> &[f64] {
        &self.direction
    }
}

fn check_weight(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::invalid(format!("{name} must be >= 0, got {v}")));
    }
    Ok(())
}

/// `1 - <z, e> + lambda ||w - w_z||^2` for an already computed embedding `e`.
pub fn identity_terms<'t, T: Real>(
    embedding: Var<'t, T>,
    z_embed: &Embedding<T>,
    w: Var<'t, T>,
    w_z: &Array<T>,
    lambda: T,
) -> Result<Var<'t, T>> {
    check_weight("lambda", lambda.to_f64_lossy())?;
    let tape = w.tape();
    let agreement = embedding.mul(tape.constant(z_embed.as_array().clone()))?.sum()?;
    let n = w_z.len();
    let anchor = w.reshape(&[n])?.sub(tape.constant(w_z.reshape(&[n])?))?.sq_norm()?;
    Ok(agreement.neg()?.add_scalar(T::one())?.add(anchor.scale(lambda)?)?)
}

/// Identity loss `1 - <T(Z), T(G(w))> + lambda ||w - w_z||^2`.
pub fn identity_loss<'t, T: Real>(
    w: Var<'t, T>,
    w_z: &LatentCode<T>,
    z_embed: &Embedding<T>,
    gen: &Generator<T>,
    embedder: &Embedder<T>,
    lambda: T,
) -> Result<Var<'t, T>> {
    let e = embedder.embed_var(gen.generate_var(w)?)?;
    identity_terms(e, z_embed, w, w_z.as_array(), lambda)
}

/// Attribute loss `1 - cos(flatten(w) + gamma d, d)`.
pub fn emotion_loss<'t, T: Real>(w: Var<'t, T>, dir: &SemanticDirection, gamma: T) -> Result<Var<'t, T>> {
    check_weight("gamma", gamma.to_f64_lossy())?;
    let n = dir.direction.len();
    if w.shape().iter().product::<usize>() != n {
        return Err(Error::invalid(format!(
            "latent has {} entries, direction has {n}",
            w.shape().iter().product::<usize>()
        )));
    }
    let d = w
        .tape()
        .constant(Array::from_fn(&[n], |i| T::lit(dir.direction[i]))?);
    let shifted = w.reshape(&[n])?.add(d.scale(gamma)?)?;
    Ok(shifted.cosine_similarity(d)?.neg()?.add_scalar(T::one())?.reshape(&[1])?)
}
