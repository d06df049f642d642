//! Reverse-mode differentiation over dense real arrays.
//!
//! The operator set is deliberately small: exactly what the degradation model,
//! the generator and the semantic losses are built from. Each operator records
//! its vector-Jacobian product on a [`Tape`]; a fresh tape is built for every
//! objective evaluation.

mod array;
pub mod dct;
pub mod gradcheck;
mod ops;
pub mod resample;
mod tape;

use thiserror::Error;

pub use array::Array;
pub(crate) use array::compensated_sum;
pub use dct::{dct8_forward, dct8_inverse, DctDirection};
pub use ops::{round_half_away, soft_round_value, Padding, DEGENERATE_NORM};
pub use tape::{BackwardCtx, BackwardFn, Gradients, Tape, Var};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("{op}: shape mismatch, expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
    #[error("{op}: non-finite value{}", .index.map(|i| format!(" at index {i}")).unwrap_or_default())]
    NonFinite {
        op: &'static str,
        index: Option<usize>,
    },
    #[error("{op}: vector norm {norm:e} is too small to define a direction")]
    DegenerateVector { op: &'static str, norm: f64 },
    #[error("backward needs a single-element output, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
}
