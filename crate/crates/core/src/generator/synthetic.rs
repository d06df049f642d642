//! Seeded two-layer decoder standing in for a pretrained image generator.
//!
//! Hidden units come in three groups:
//! - planted units, whose first-layer columns are the planted directions, so
//!   moving along a direction visibly changes the image;
//! - regular units, random columns driving smooth patterns at several scales;
//! - detail units, driving fine patterns with zero mean over every
//!   `detail_tile x detail_tile` tile. Box downsampling by that factor removes
//!   them before the sigmoid, which makes low-resolution observations
//!   genuinely ambiguous.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::decoder::{Activation, DenseLayer, MlpDecoder};
use super::SyntheticSpec;
use crate::error::{Error, Result};
use crate::numerics::Array;

/// Hidden pre-activation gain on planted directions.
const PLANTED_GAIN: f64 = 1.5;
const PLANTED_AMPLITUDE: f64 = 0.5;
const REGULAR_AMPLITUDE: f64 = 0.2;
const DETAIL_AMPLITUDE: f64 = 0.25;
const REGULAR_SCALES: [f64; 3] = [1.5, 3.0, 6.0];

pub(super) fn build(spec: &SyntheticSpec) -> Result<MlpDecoder<f64>> {
    let [l, d] = spec.latent_shape;
    let [h, w, c] = spec.output_shape;
    let n = l * d;
    let planted = spec.planted.len();
    if planted + spec.detail > spec.hidden {
        return Err(Error::invalid(format!(
            "{} hidden units cannot hold {planted} planted and {} detail units",
            spec.hidden, spec.detail
        )));
    }
    if spec.detail > 0 && (spec.detail_tile == 0 || h % spec.detail_tile != 0 || w % spec.detail_tile != 0) {
        return Err(Error::invalid(format!(
            "detail tile {} must divide the output size {h}x{w}",
            spec.detail_tile
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let hidden = spec.hidden;
    let detail_start = hidden - spec.detail;

    let mut w1 = vec![0.0; n * hidden];
    for j in 0..hidden {
        for i in 0..n {
            w1[i * hidden + j] = if j < planted {
                PLANTED_GAIN * spec.planted[j].direction[i]
            } else {
                normal(&mut rng) / (n as f64).sqrt()
            };
        }
    }
    let b1: Vec<f64> = (0..hidden).map(|_| 0.1 * normal(&mut rng)).collect();

    let out = h * w * c;
    let mut w2 = Vec::with_capacity(hidden * out);
    for j in 0..hidden {
        let (pattern, amplitude) = if j >= detail_start {
            let mut p = smooth_noise(&mut rng, h, w, 0.8);
            remove_tile_means(&mut p, h, w, spec.detail_tile);
            normalize_rms(&mut p);
            (p, DETAIL_AMPLITUDE)
        } else {
            let p = smooth_noise(&mut rng, h, w, REGULAR_SCALES[j % REGULAR_SCALES.len()]);
            (p, if j < planted { PLANTED_AMPLITUDE } else { REGULAR_AMPLITUDE })
        };
        let colour: Vec<f64> = (0..c).map(|_| 0.7 + 0.5 * normal(&mut rng)).collect();
        for p in &pattern {
            for &k in &colour {
                w2.push(amplitude * p * k);
            }
        }
    }

    let base = smooth_noise(&mut rng, h, w, 10.0);
    let tint: Vec<f64> = (0..c).map(|_| 0.3 * normal(&mut rng)).collect();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let radius = 0.3 * h.min(w) as f64;
    let mut b2 = Vec::with_capacity(out);
    for y in 0..h {
        for x in 0..w {
            let r2 = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)) / (2.0 * radius * radius);
            let blob = 0.8 * (-r2).exp() - 0.4;
            for &t in &tint {
                b2.push(blob + 0.4 * base[y * w + x] + t);
            }
        }
    }

    MlpDecoder::new(vec![
        DenseLayer::new(Array::new(vec![n, hidden], w1)?, Array::from_vec(b1)?, Activation::Tanh)?,
        DenseLayer::new(Array::new(vec![hidden, out], w2)?, Array::from_vec(b2)?, Activation::Sigmoid)?,
    ])
}

/// `count` orthonormal directions in `R^n`, seeded.
pub fn random_orthonormal(n: usize, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if count > n {
        return Err(Error::invalid(format!("cannot fit {count} orthonormal vectors in {n} dimensions")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    Ok(basis)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// White noise blurred by a separable Gaussian, zero mean and unit RMS.
fn smooth_noise(rng: &mut ChaCha8Rng, h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let noise: Vec<f64> = (0..h * w).map(|_| normal(rng)).collect();
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|t| (-(t * t) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let blur = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut dst = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, &t) in taps.iter().enumerate() {
                    let o = k as isize - radius;
                    let (sy, sx) = if horizontal {
                        (y as isize, (x as isize + o).clamp(0, w as isize - 1))
                    } else {
                        ((y as isize + o).clamp(0, h as isize - 1), x as isize)
                    };
                    acc += t * src[sy as usize * w + sx as usize];
                }
                dst[y * w + x] = acc;
            }
        }
        dst
    };
    let mut out = blur(&blur(&noise, true), false);
    let mean = out.iter().sum::<f64>() / out.len() as f64;
    out.iter_mut().for_each(|v| *v -= mean);
    normalize_rms(&mut out);
    out
}

fn remove_tile_means(p: &mut [f64], h: usize, w: usize, tile: usize) {
    for ty in (0..h).step_by(tile) {
        for tx in (0..w).step_by(tile) {
            let idx = |i: usize| (ty + i / tile) * w + tx + i % tile;
            let mean = (0..tile * tile).map(|i| p[idx(i)]).sum::<f64>() / (tile * tile) as f64;
            (0..tile * tile).for_each(|i| p[idx(i)] -= mean);
        }
    }
}

fn normalize_rms(p: &mut [f64]) {
    let rms = (p.iter().map(|v| v * v).sum::<f64>() / p.len() as f64).sqrt();
    if rms > 0.0 {
        p.iter_mut().for_each(|v| *v /= rms);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthonormal_directions() {
        let dirs = random_orthonormal(20, 4, 3).unwrap();
        for (i, a) in dirs.iter().enumerate() {
            for (j, b) in dirs.iter().enumerate() {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
        assert!(random_orthonormal(3, 4, 0).is_err());
    }

    #[test]
    fn detail_patterns_vanish_under_tile_averaging() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = smooth_noise(&mut rng, 16, 16, 0.8);
        remove_tile_means(&mut p, 16, 16, 4);
        for ty in 0..4 {
            for tx in 0..4 {
                let s: f64 = (0..16).map(|i| p[(4 * ty + i / 4) * 16 + 4 * tx + i % 4]).sum();
                assert!(s.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn smooth_noise_is_normalised() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = smooth_noise(&mut rng, 32, 24, 3.0);
        let mean = p.iter().sum::<f64>() / p.len() as f64;
        let ms = p.iter().map(|v| v * v).sum::<f64>() / p.len() as f64;
        assert!(mean.abs() < 1e-12);
        assert!((ms - 1.0).abs() < 1e-12);
    }
}
