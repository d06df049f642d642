//! The full restoration objective and its optimisation driver.
//!
//! `f(w) = L_d + L_ID + a1 L_e + a2 L_hist`, minimised by Adam from the
//! inverted reference latent `w_z`.

mod config;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{Fidelity, RestoreConfig};

use crate::degradation::degrade_var;
use crate::error::{Error, Result};
use crate::generator::{invert, Generator, InversionConfig, LatentCode};
use crate::image::{encode_png, ImageBuffer};
use crate::json::write_json;
use crate::numerics::{Array, Tape, Var};
use crate::scalar::Real;
use crate::semantics::{
    emotion_loss, hist_loss, identity_terms, resize_mask, validate_mask, Embedder, Embedding, HistogramParams,
    SemanticDirection,
};

/// Loss terms as they enter the total, i.e. already weighted. Inactive terms
/// are exactly zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub data: f64,
    pub identity: f64,
    pub emotion: f64,
    pub hist: f64,
}

struct IdentityTerm<T> {
    z_embed: Embedding<T>,
    w_z: Array<T>,
    lambda: T,
}

struct EmotionTerm<'a, T> {
    direction: &'a SemanticDirection,
    gamma: T,
    alpha1: T,
}

struct HistTerm<T> {
    mask_g: Array<T>,
    mask_y: Array<T>,
    params: HistogramParams,
    alpha2: T,
}

/// Everything `total_loss` needs besides `w`. Built once per restoration.
pub struct LossContext<'a, T> {
    gen: &'a Generator<T>,
    embedder: &'a Embedder<T>,
    y: Array<T>,
    config: &'a RestoreConfig,
    identity: Option<IdentityTerm<T>>,
    emotion: Option<EmotionTerm<'a, T>>,
    hist: Option<HistTerm<T>>,
}

impl<'a, T: Real> LossContext<'a, T> {
    /// `z` is the reference image at generator resolution and `w_z` its
    /// inverted latent. The histogram mask is derived from `z` and resized to
    /// the observation for the other side of the comparison.
    pub fn new(
        gen: &'a Generator<T>,
        embedder: &'a Embedder<T>,
        y: &ImageBuffer<f64>,
        z: &ImageBuffer<f64>,
        w_z: &LatentCode<f64>,
        config: &'a RestoreConfig,
        directions: &'a [SemanticDirection],
    ) -> Result<Self> {
        config.validate()?;
        check_observation(gen, y, config)?;
        let [h, w, c] = gen.output_shape();
        if z.dims() != (h, w, c) {
            return Err(Error::invalid(format!(
                "reference is {:?}, generator produces {h}x{w}x{c}",
                z.dims()
            )));
        }
        if w_z.shape() != gen.latent_shape() {
            return Err(Error::invalid(format!(
                "w_z has shape {:?}, generator expects {:?}",
                w_z.shape(),
                gen.latent_shape()
            )));
        }

        let identity = if config.enable_id {
            Some(IdentityTerm {
                z_embed: embedder.embed(&z.cast())?,
                w_z: w_z.as_array().cast(),
                lambda: T::lit(config.lambda),
            })
        } else {
            None
        };

        let emotion = match (&config.emotion_target, config.enable_emotion && config.alpha1 > 0.0) {
            (Some(name), true) => {
                let direction = directions.iter().find(|d| &d.name == name).ok_or_else(|| {
                    let known: Vec<&str> = directions.iter().map(|d| d.name.as_str()).collect();
                    Error::invalid(format!("no direction named {name:?}; available: {known:?}"))
                })?;
                if direction.direction().len() != w_z.len() {
                    return Err(Error::invalid(format!(
                        "direction {name:?} has length {}, latent has {}",
                        direction.direction().len(),
                        w_z.len()
                    )));
                }
                Some(EmotionTerm {
                    direction,
                    gamma: T::lit(config.gamma),
                    alpha1: T::lit(config.alpha1),
                })
            }
            _ => None,
        };

        let hist = if config.enable_hist && config.alpha2 > 0.0 {
            let mask_g = config.mask.mask_for(z)?;
            let mask_y = resize_mask(&mask_g, y.height(), y.width())?;
            validate_mask(&mask_y)?;
            Some(HistTerm {
                mask_g: mask_g.cast(),
                mask_y: mask_y.cast(),
                params: HistogramParams::new(config.hist_bins),
                alpha2: T::lit(config.alpha2),
            })
        } else {
            None
        };

        Ok(Self {
            gen,
            embedder,
            y: y.as_array().cast(),
            config,
            identity,
            emotion,
            hist,
        })
    }
}

fn check_observation<T: Real>(gen: &Generator<T>, y: &ImageBuffer<f64>, config: &RestoreConfig) -> Result<()> {
    let [h, w, c] = gen.output_shape();
    let (oh, ow) = config.degradation.output_dims(h, w)?;
    if y.dims() != (oh, ow, c) {
        return Err(Error::invalid(format!(
            "observation is {:?}, the assumed degradation of a {h}x{w}x{c} output gives {oh}x{ow}x{c}",
            y.dims()
        )));
    }
    Ok(())
}

/// The full objective at `w`, with its weighted terms.
pub fn total_loss<'t, T: Real>(w: Var<'t, T>, ctx: &LossContext<'_, T>) -> Result<(Var<'t, T>, LossBreakdown)> {
    let tape = w.tape();
    let image = ctx.gen.generate_var(w)?;
    let y = tape.constant(ctx.y.clone());
    let residual = degrade_var(image, &ctx.config.degradation)?.sub(y)?;
    let sq = residual.mul(residual)?;
    let data = match ctx.config.fidelity {
        Fidelity::Mean => sq.mean()?,
        Fidelity::Sum => sq.sum()?,
    };
    let mut breakdown = LossBreakdown {
        data: data.item()?.to_f64_lossy(),
        ..LossBreakdown::default()
    };
    let mut total = data;

    if let Some(term) = &ctx.identity {
        let e = ctx.embedder.embed_var(image)?;
        let v = identity_terms(e, &term.z_embed, w, &term.w_z, term.lambda)?;
        breakdown.identity = v.item()?.to_f64_lossy();
        total = total.add(v)?;
    }
    if let Some(term) = &ctx.emotion {
        let v = emotion_loss(w, term.direction, term.gamma)?.sum()?.scale(term.alpha1)?;
        breakdown.emotion = v.item()?.to_f64_lossy();
        total = total.add(v)?;
    }
    if let Some(term) = &ctx.hist {
        let v = hist_loss(image, &term.mask_g, y, &term.mask_y, term.params)?.scale(term.alpha2)?;
        breakdown.hist = v.item()?.to_f64_lossy();
        total = total.add(v)?;
    }
    breakdown.total = total.item()?.to_f64_lossy();
    Ok((total, breakdown))
}

/// Objective and gradient at a flat latent.
pub fn evaluate(w: &[f64], ctx: &LossContext<'_, f64>) -> Result<(LossBreakdown, Vec<f64>)> {
    let tape = Tape::new();
    let [l, d] = ctx.gen.latent_shape();
    let wv = tape.var(Array::new(vec![l, d], w.to_vec())?);
    let (total, breakdown) = total_loss(wv, ctx)?;
    let grad = tape.backward(total)?.get_or_zeros(wv).into_data();
    Ok((breakdown, grad))
}

/// Index of the pool image whose embedding is closest to that of `y`, and
/// the image itself. `y` is resized to the embedder's resolution first. Ties
/// go to the lowest index.
pub fn select_reference<'p>(
    pool: &'p [ImageBuffer<f64>],
    y: &ImageBuffer<f64>,
    embedder: &Embedder<f64>,
) -> Result<(usize, &'p ImageBuffer<f64>)> {
    if pool.is_empty() {
        return Err(Error::invalid("reference pool is empty"));
    }
    let target = embedder.embed(y)?;
    let mut best = (0, f64::NEG_INFINITY);
    for (i, candidate) in pool.iter().enumerate() {
        let s = embedder.embed(candidate)?.cosine(&target);
        if s > best.1 {
            best = (i, s);
        }
    }
    Ok((best.0, &pool[best.0]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestorationResult {
    pub image: ImageBuffer<f64>,
    pub latent: LatentCode,
    pub w_z: LatentCode,
    pub reference: usize,
    /// One entry per iteration, for the iterate the step was taken from.
    pub trace: Vec<LossBreakdown>,
    /// Loss at the returned latent.
    pub final_loss: LossBreakdown,
    /// Iteration whose iterate was returned; `None` when no step ran.
    pub best_iteration: Option<usize>,
    pub seconds: f64,
}

/// Everything in a result except the image, for JSON export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestorationReport {
    pub reference: usize,
    pub latent: LatentCode,
    pub w_z: LatentCode,
    pub final_loss: LossBreakdown,
    pub best_iteration: Option<usize>,
    pub trace: Vec<LossBreakdown>,
    pub seconds: f64,
}

impl RestorationResult {
    pub fn report(&self) -> RestorationReport {
        RestorationReport {
            reference: self.reference,
            latent: self.latent.clone(),
            w_z: self.w_z.clone(),
            final_loss: self.final_loss,
            best_iteration: self.best_iteration,
            trace: self.trace.clone(),
            seconds: self.seconds,
        }
    }

    pub fn png_bytes(&self) -> Result<Vec<u8>> {
        encode_png(&self.image)
    }

    /// Writes the image as PNG and the report as JSON.
    pub fn save(&self, png: &std::path::Path, report: &std::path::Path) -> Result<()> {
        crate::image::save_png(&self.image, png)?;
        write_json(&self.report(), report)
    }
}

/// Selects a reference from `pool`, inverts it and optimises from there.
pub fn restore(
    y: &ImageBuffer<f64>,
    pool: &[ImageBuffer<f64>],
    config: &RestoreConfig,
    gen: &Generator<f64>,
    embedder: &Embedder<f64>,
    directions: &[SemanticDirection],
) -> Result<RestorationResult> {
    config.validate()?;
    check_observation(gen, y, config)?;
    let (index, z) = select_reference(pool, y, embedder)?;
    restore_with_reference(y, index, z, config, gen, embedder, directions)
}

/// Restoration with a given reference image, identified by `index` in the
/// report.
pub fn restore_with_reference(
    y: &ImageBuffer<f64>,
    index: usize,
    z: &ImageBuffer<f64>,
    config: &RestoreConfig,
    gen: &Generator<f64>,
    embedder: &Embedder<f64>,
    directions: &[SemanticDirection],
) -> Result<RestorationResult> {
    let start = Instant::now();
    config.validate()?;
    check_observation(gen, y, config)?;
    let w_z = invert_reference(z, config, gen)?;
    let mut res = restore_from_guide(y, index, z, &w_z, config, gen, embedder, directions)?;
    res.seconds = start.elapsed().as_secs_f64();
    Ok(res)
}

/// The guide latent `w_z` for reference `z`, by the configured inversion.
pub fn invert_reference(z: &ImageBuffer<f64>, config: &RestoreConfig, gen: &Generator<f64>) -> Result<LatentCode> {
    let inversion = InversionConfig::new(config.inversion_iters, config.inversion_lr, config.seed);
    Ok(invert(gen, z, &inversion)?.w_z)
}

/// Optimisation from an already inverted reference. Starts at `w = w_z`.
#[allow(clippy::too_many_arguments)]
pub fn restore_from_guide(
    y: &ImageBuffer<f64>,
    index: usize,
    z: &ImageBuffer<f64>,
    w_z: &LatentCode,
    config: &RestoreConfig,
    gen: &Generator<f64>,
    embedder: &Embedder<f64>,
    directions: &[SemanticDirection],
) -> Result<RestorationResult> {
    let start = Instant::now();
    let ctx = LossContext::new(gen, embedder, y, z, w_z, config, directions)?;

    let mut state = crate::optim::AdamState::new(w_z.flatten().to_vec());
    let mut trace = Vec::with_capacity(config.iterations);
    let mut best: Option<(usize, LossBreakdown, Vec<f64>)> = None;
    for it in 0..config.iterations {
        let (breakdown, grad) = match evaluate(&state.params, &ctx) {
            Ok(v) => v,
            Err(e) => return Err(abort(it, trace, e)),
        };
        if !breakdown.total.is_finite() {
            let e = Error::NonFiniteLoss {
                what: "total loss",
                iteration: it,
            };
            return Err(abort(it, trace, e));
        }
        trace.push(breakdown);
        if best.as_ref().is_none_or(|(_, b, _)| breakdown.total < b.total) {
            best = Some((it, breakdown, state.params.clone()));
        }
        state = match crate::optim::adam_step(&state, &grad, &config.adam) {
            Ok(s) => s,
            Err(e) => return Err(abort(it, trace, e)),
        };
    }
    let (best_iteration, final_loss, params) = match best {
        Some((it, b, p)) => (Some(it), b, p),
        None => {
            let params = w_z.flatten().to_vec();
            (None, evaluate(&params, &ctx)?.0, params)
        }
    };
    let latent = LatentCode::from_flat(gen.latent_shape(), params)?;
    Ok(RestorationResult {
        image: gen.generate(&latent)?,
        latent,
        w_z: w_z.clone(),
        reference: index,
        trace,
        final_loss,
        best_iteration,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn abort(iteration: usize, trace: Vec<LossBreakdown>, source: Error) -> Error {
    Error::RestoreAborted {
        iteration,
        trace,
        source: Box::new(source),
    }
}
