use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Generator, LatentCode};
use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::numerics::Tape;
use crate::optim::{adam_step, AdamParams, AdamState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionConfig {
    pub iters: usize,
    pub adam: AdamParams,
    /// Seeds the standard-normal starting point when `init` is absent.
    pub seed: u64,
    #[serde(default)]
    pub init: Option<LatentCode>,
}

impl InversionConfig {
    pub fn new(iters: usize, lr: f64, seed: u64) -> Self {
        Self {
            iters,
            adam: AdamParams::with_lr(lr),
            seed,
            init: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionResult {
    /// Best iterate seen.
    pub w_z: LatentCode,
    /// Mean squared reconstruction error at `w_z`.
    pub loss: f64,
    /// Loss of the iterate evaluated at each iteration.
    pub trace: Vec<f64>,
}

/// Mean squared error of `G(w)` against `target`, with its gradient.
fn reconstruction(gen: &Generator<f64>, target: &ImageBuffer<f64>, w: &[f64]) -> Result<(f64, Vec<f64>)> {
    let tape = Tape::new();
    let [l, d] = gen.latent_shape();
    let wv = tape.var(crate::numerics::Array::new(vec![l, d], w.to_vec())?);
    let diff = gen.generate_var(wv)?.sub(tape.constant(target.as_array().clone()))?;
    let loss = diff.mul(diff)?.mean()?;
    let value = loss.item()?;
    let grad = tape.backward(loss)?.get_or_zeros(wv).into_data();
    Ok((value, grad))
}

/// Finds `w` with `G(w)` close to `target` by Adam on the mean squared error.
pub fn invert(gen: &Generator<f64>, target: &ImageBuffer<f64>, cfg: &InversionConfig) -> Result<InversionResult> {
    cfg.adam.validate()?;
    let [h, w, c] = gen.output_shape();
    if target.dims() != (h, w, c) {
        return Err(Error::invalid(format!(
            "target is {:?}, generator produces {h}x{w}x{c}",
            target.dims()
        )));
    }
    let init = match &cfg.init {
        Some(code) if code.shape() != gen.latent_shape() => {
            return Err(Error::invalid(format!(
                "initial latent has shape {:?}, generator expects {:?}",
                code.shape(),
                gen.latent_shape()
            )))
        }
        Some(code) => code.clone(),
        None => gen.sample_latent(&mut ChaCha8Rng::seed_from_u64(cfg.seed)),
    };
    let shape = init.shape();

    let mut state = AdamState::new(init.flatten().to_vec());
    let mut trace = Vec::with_capacity(cfg.iters);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for it in 0..cfg.iters {
        let (loss, grad) = reconstruction(gen, target, &state.params).map_err(|e| e.at_iteration(it))?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                what: "reconstruction loss",
                iteration: it,
            });
        }
        trace.push(loss);
        if best.as_ref().is_none_or(|(b, _)| loss < *b) {
            best = Some((loss, state.params.clone()));
        }
        state = adam_step(&state, &grad, &cfg.adam).map_err(|e| e.at_iteration(it))?;
    }
    let (loss, params) = match best {
        Some(b) => b,
        None => (reconstruction(gen, target, init.flatten())?.0, init.flatten().to_vec()),
    };
    Ok(InversionResult {
        w_z: LatentCode::from_flat(shape, params)?,
        loss,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::GeneratorSpec;

    #[test]
    fn zero_iterations_returns_the_start() {
        let gen = Generator::from_spec(&GeneratorSpec::desk(1, 1).unwrap()).unwrap();
        let w = gen.sample_latent(&mut ChaCha8Rng::seed_from_u64(2));
        let target = gen.generate(&w).unwrap();
        let cfg = InversionConfig {
            init: Some(w.clone()),
            ..InversionConfig::new(0, 0.05, 0)
        };
        let res = invert(&gen, &target, &cfg).unwrap();
        assert_eq!(res.w_z, w);
        assert!(res.loss < 1e-20);
        assert!(res.trace.is_empty());
    }

    #[test]
    fn short_run_improves_and_reports_best() {
        let gen = Generator::from_spec(&GeneratorSpec::desk(3, 0).unwrap()).unwrap();
        let target = gen.generate(&gen.sample_latent(&mut ChaCha8Rng::seed_from_u64(4))).unwrap();
        let res = invert(&gen, &target, &InversionConfig::new(60, 0.05, 5)).unwrap();
        assert_eq!(res.trace.len(), 60);
        let min = res.trace.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(res.loss, min);
        assert!(res.loss < res.trace[0]);
    }

    #[test]
    fn rejects_wrong_target() {
        let gen = Generator::from_spec(&GeneratorSpec::desk(1, 0).unwrap()).unwrap();
        let target = ImageBuffer::filled(32, 32, 3, 0.5).unwrap();
        assert!(invert(&gen, &target, &InversionConfig::new(1, 0.05, 0)).is_err());
    }
}
