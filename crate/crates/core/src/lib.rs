//! Semantic-aware image restoration through a generative prior.
//!
//! Everything that is differentiated is generic over [`Real`]; the drivers
//! that only ever run in double precision use the `f64` aliases below.

pub mod degradation;
pub mod directions;
mod error;
pub mod generator;
pub mod harness;
pub mod image;
pub mod json;
pub mod numerics;
pub mod optim;
pub mod restore;
pub mod scalar;
pub mod semantics;

pub use error::{Error, Result};
pub use numerics::{Array, NumericsError, Tape, Var};
pub use scalar::Real;

pub type Image = image::ImageBuffer<f64>;
pub type Latent = generator::LatentCode<f64>;
pub type Image32 = image::ImageBuffer<f32>;
pub type Latent32 = generator::LatentCode<f32>;
