use serde::{Deserialize, Serialize};

use crate::degradation::{DegradationSpec, Downsample, Kernel};
use crate::error::{Error, Result};
use crate::optim::AdamParams;
use crate::semantics::{HistogramParams, MaskProvider};

/// How the fidelity residual is reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fidelity {
    /// Mean squared error, so the loss weights do not depend on resolution.
    #[default]
    Mean,
    /// Squared Frobenius norm.
    Sum,
}

/// Restoration settings. Every field has a default, so `{}` is a valid
/// document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RestoreConfig {
    /// Weight of the anchor `||w - w_z||^2` inside the identity term.
    pub lambda: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    /// Shift along the attribute direction inside the emotion term.
    pub gamma: f64,
    pub adam: AdamParams,
    pub iterations: usize,
    /// Degradation assumed by the fidelity term. It need not match the one
    /// that produced the observation.
    pub degradation: DegradationSpec,
    pub fidelity: Fidelity,
    pub enable_id: bool,
    pub enable_emotion: bool,
    pub enable_hist: bool,
    /// Name of the attribute direction to steer toward. Without one the
    /// emotion term is inactive.
    pub emotion_target: Option<String>,
    pub hist_bins: usize,
    pub mask: MaskProvider,
    pub inversion_iters: usize,
    pub inversion_lr: f64,
    /// Seeds the starting point of the reference inversion.
    pub seed: u64,
}

impl Default for RestoreConfig {
    fn default() -> Self {
        Self {
            lambda: 0.001,
            alpha1: 0.1,
            alpha2: 0.05,
            gamma: 1.0,
            adam: AdamParams::default(),
            iterations: 400,
            degradation: DegradationSpec {
                kernel: Kernel::identity(),
                scale: 4,
                downsample: Downsample::Box,
                ..DegradationSpec::identity()
            },
            fidelity: Fidelity::Mean,
            enable_id: true,
            enable_emotion: true,
            enable_hist: true,
            emotion_target: None,
            hist_bins: 32,
            mask: MaskProvider::Full,
            inversion_iters: 500,
            inversion_lr: 0.05,
            seed: 0,
        }
    }
}

impl RestoreConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda", self.lambda),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("gamma", self.gamma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        self.adam.validate()?;
        self.degradation.validate()?;
        if self.degradation.scale > 1 && self.degradation.downsample == Downsample::Bicubic {
            return Err(Error::invalid(
                "the assumed degradation must be differentiable; use box downsampling",
            ));
        }
        HistogramParams::new(self.hist_bins).validate()?;
        if !(self.inversion_lr > 0.0 && self.inversion_lr.is_finite()) {
            return Err(Error::invalid(format!(
                "inversion learning rate must be positive, got {}",
                self.inversion_lr
            )));
        }
        Ok(())
    }
}
