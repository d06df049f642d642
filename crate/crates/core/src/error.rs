use std::path::PathBuf;

use thiserror::Error;

use crate::numerics::NumericsError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] NumericsError),

    /// Caller-supplied input violates a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("embedding is degenerate: pre-normalisation norm {norm:e}")]
    DegenerateEmbedding { norm: f64 },

    #[error("labels are degenerate: {positive} positive, {negative} negative samples")]
    DegenerateLabels { positive: usize, negative: usize },

    #[error("non-finite {what} at iteration {iteration}")]
    NonFiniteLoss { what: &'static str, iteration: usize },

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    /// The restoration loop stopped on a non-finite loss. `trace` holds every
    /// iterate evaluated before it.
    #[error("restoration aborted at iteration {iteration}: {source}")]
    RestoreAborted {
        iteration: usize,
        trace: Vec<crate::restore::LossBreakdown>,
        #[source]
        source: Box<Error>,
    },

    #[error("labeler failed: {0}")]
    Labeler(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: ::image::ImageError,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Self::InvalidInput(msg.into())
    }

    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        match self {
            e @ (Self::AtIteration { .. } | Self::NonFiniteLoss { .. } | Self::RestoreAborted { .. }) => e,
            e => Self::AtIteration {
                iteration,
                source: Box::new(e),
            },
        }
    }

    /// Whether the error comes from validating inputs rather than from
    /// running a computation.
    pub fn is_validation(&self) -> bool {
        match self {
            Self::InvalidInput(_) | Self::Json { .. } | Self::Image { .. } | Self::Io { .. } => true,
            Self::Numerics(e) => matches!(
                e,
                NumericsError::ShapeMismatch { .. } | NumericsError::InvalidArgument { .. }
            ),
            _ => false,
        }
    }
}
