//! Bias-corrected Adam over a flat parameter vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::invalid(format!("eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Parameters with their first and second moment estimates. `t` counts the
/// steps taken so far.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub params: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: usize,
}

impl AdamState {
    pub fn new(params: Vec<f64>) -> Self {
        let n = params.len();
        Self {
            params,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One Adam update, returning the new state. Step `t + 1` is taken.
pub fn adam_step(state: &AdamState, grads: &[f64], hp: &AdamParams) -> Result<AdamState> {
    if grads.len() != state.params.len() {
        return Err(Error::invalid(format!(
            "gradient has {} entries, parameters have {}",
            grads.len(),
            state.params.len()
        )));
    }
    let t = state.t + 1;
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss {
            what: "gradient",
            iteration: t,
        });
    }
    let bc1 = 1.0 - hp.beta1.powi(t as i32);
    let bc2 = 1.0 - hp.beta2.powi(t as i32);
    let mut next = state.clone();
    next.t = t;
    for i in 0..grads.len() {
        let g = grads[i];
        next.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * g;
        next.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * g * g;
        let m_hat = next.m[i] / bc1;
        let v_hat = next.v[i] / bc2;
        next.params[i] -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_lr_times_sign() {
        let s = AdamState::new(vec![0.0]);
        let next = adam_step(&s, &[1.0], &AdamParams::default()).unwrap();
        // m_hat = 1, v_hat = 1, update = -0.1 / (1 + 1e-8)
        assert!((next.params[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(next.t, 1);
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let s = AdamState::new(vec![0.3, -2.0, 5.0]);
        let next = adam_step(&s, &[0.0; 3], &AdamParams::default()).unwrap();
        assert_eq!(next.params, s.params);
    }

    #[test]
    fn deterministic() {
        let s = AdamState::new(vec![0.3, -2.0]);
        let hp = AdamParams::with_lr(0.05);
        let a = adam_step(&adam_step(&s, &[0.2, -1.0], &hp).unwrap(), &[0.1, 0.4], &hp).unwrap();
        let b = adam_step(&adam_step(&s, &[0.2, -1.0], &hp).unwrap(), &[0.1, 0.4], &hp).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn matches_reference_recurrence() {
        // Independent scalar recurrence over several steps.
        let hp = AdamParams::default();
        let grads = [0.5, -0.2, 0.9, 0.0, -1.3];
        let mut s = AdamState::new(vec![1.0]);
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for (k, &g) in grads.iter().enumerate() {
            s = adam_step(&s, &[g], &hp).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let t = (k + 1) as i32;
            x -= 0.1 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
            assert!((s.params[0] - x).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let s = AdamState::new(vec![0.0, 0.0]);
        assert!(adam_step(&s, &[1.0], &AdamParams::default()).is_err());
        let err = adam_step(&s, &[1.0, f64::NAN], &AdamParams::default()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { iteration: 1, .. }));
        assert!(AdamParams::with_lr(0.0).validate().is_err());
    }
}
