//! Differentiable weighted histograms and the CDF matching loss.
//!
//! Each value spreads unit mass uniformly over `[v - b/2, v + b/2]`; bin `j`
//! collects the overlap with `[j/K, (j+1)/K)`, the outer bins extending to
//! infinity. With `b = 1/K` this is linear interpolation between the two
//! nearest bin centres, and the result equals hard binning whenever every
//! value lies at least `b/2` from every interior bin boundary.

use crate::error::{Error, Result};
use crate::numerics::{Array, Var};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramParams {
    pub bins: usize,
    pub bandwidth: f64,
}

impl HistogramParams {
    /// `bins` bins with the default bandwidth `1 / bins`.
    pub fn new(bins: usize) -> Self {
        Self {
            bins,
            bandwidth: 1.0 / bins as f64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::invalid(format!("histogram needs at least 2 bins, got {}", self.bins)));
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::invalid(format!("bandwidth must be positive, got {}", self.bandwidth)));
        }
        Ok(())
    }
}

/// Overlap of `[lo, hi]` with bin `j`, and the derivative of that overlap
/// with respect to shifting the interval.
fn overlap(lo: f64, hi: f64, j: usize, k: usize) -> (f64, f64) {
    let left = if j == 0 { f64::NEG_INFINITY } else { j as f64 / k as f64 };
    let right = if j + 1 == k { f64::INFINITY } else { (j + 1) as f64 / k as f64 };
    let a = lo.max(left);
    let b = hi.min(right);
    if b <= a {
        return (0.0, 0.0);
    }
    let d_hi = if hi < right { 1.0 } else { 0.0 };
    let d_lo = if lo > left { 1.0 } else { 0.0 };
    (b - a, d_hi - d_lo)
}

/// Bins touched by `[lo, hi]`, clamped to `0..k`.
fn bin_range(lo: f64, hi: f64, k: usize) -> std::ops::RangeInclusive<usize> {
    let idx = |x: f64| ((x * k as f64).floor().max(0.0) as usize).min(k - 1);
    idx(lo)..=idx(hi)
}

/// Whether `v` lies within `10 h` of a point where its soft assignment has a
/// kink, so a central difference of step `h` straddles it.
pub fn near_kink(v: f64, params: HistogramParams, h: f64) -> bool {
    let k = params.bins as f64;
    let half = params.bandwidth / 2.0;
    [v - half, v + half].iter().any(|&e| {
        let nearest = (e * k).round() / k;
        (e - nearest).abs() < 10.0 * h && nearest > 0.0 && nearest < 1.0
    })
}

/// Normalised weighted soft histogram of `values` (`[n]`) with nonnegative
/// `weights` (`[n]`). Returns `[bins]`, summing to 1.
pub fn soft_histogram<'t, T: Real>(
    values: Var<'t, T>,
    weights: Var<'t, T>,
    params: HistogramParams,
) -> Result<Var<'t, T>> {
    params.validate()?;
    let n = values.value().len();
    if weights.value().len() != n {
        return Err(Error::invalid(format!(
            "{} weights for {n} values",
            weights.value().len()
        )));
    }
    {
        let w = weights.value();
        if w.data().iter().any(|&v| v < T::zero()) {
            return Err(Error::invalid("histogram weights must be nonnegative"));
        }
        if w.sum() <= T::zero() {
            return Err(Error::invalid("histogram weights sum to zero"));
        }
    }
    let HistogramParams { bins: k, bandwidth: b } = params;
    let half = b / 2.0;
    let tape = values.tape();
    let out = tape.record(
        "soft_histogram",
        &[values, weights],
        move |x| {
            let (v, w) = (x[0].data(), x[1].data());
            let total = w.iter().map(|x| x.to_f64_lossy()).sum::<f64>();
            let mut h = vec![0.0; k];
            for (&vi, &wi) in v.iter().zip(w) {
                let (vi, wi) = (vi.to_f64_lossy(), wi.to_f64_lossy());
                let (lo, hi) = (vi - half, vi + half);
                for j in bin_range(lo, hi, k) {
                    h[j] += wi * overlap(lo, hi, j, k).0 / b;
                }
            }
            Array::from_fn(&[k], |j| T::lit(h[j] / total))
        },
        Box::new(move |ctx| {
            let (v, w) = (ctx.inputs[0].data(), ctx.inputs[1].data());
            let total = w.iter().map(|x| x.to_f64_lossy()).sum::<f64>();
            let g: Vec<f64> = ctx.grad.iter().map(|x| x.to_f64_lossy()).collect();
            let h: Vec<f64> = ctx.output.data().iter().map(|x| x.to_f64_lossy()).collect();
            // dL/dw_i shares the term -sum_j g_j h_j.
            let gh: f64 = g.iter().zip(&h).map(|(a, b)| a * b).sum();
            let mut gv = vec![T::zero(); v.len()];
            let mut gw = vec![T::zero(); v.len()];
            for i in 0..v.len() {
                let (vi, wi) = (v[i].to_f64_lossy(), w[i].to_f64_lossy());
                let (lo, hi) = (vi - half, vi + half);
                let (mut dv, mut ga) = (0.0, 0.0);
                for j in bin_range(lo, hi, k) {
                    let (a, da) = overlap(lo, hi, j, k);
                    dv += g[j] * da / b;
                    ga += g[j] * a / b;
                }
                gv[i] = T::lit(wi * dv / total);
                gw[i] = T::lit((ga - gh) / total);
            }
            vec![ctx.needs(0).then_some(gv), ctx.needs(1).then_some(gw)]
        }),
    )?;
    Ok(out)
}

/// Hard-binned weighted histogram with the same bin edges.
pub fn hard_histogram(values: &[f64], weights: &[f64], bins: usize) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    let mut h = vec![0.0; bins];
    for (&v, &w) in values.iter().zip(weights) {
        let j = ((v * bins as f64).floor().max(0.0) as usize).min(bins - 1);
        h[j] += w / total;
    }
    h
}

/// Mean over channels of `(1/K) sum_j |CDF_a(j) - CDF_b(j)|`, where each
/// channel's histogram is weighted by the image's mask. The images may differ
/// in size; each mask matches its own image.
pub fn hist_loss<'t, T: Real>(
    a: Var<'t, T>,
    mask_a: &Array<T>,
    b: Var<'t, T>,
    mask_b: &Array<T>,
    params: HistogramParams,
) -> Result<Var<'t, T>> {
    let side = |img: Var<'t, T>, mask: &Array<T>| -> Result<(Vec<Var<'t, T>>, usize)> {
        let shape = img.shape();
        let [h, w, c] = match *shape.as_slice() {
            [h, w, c] => [h, w, c],
            _ => return Err(Error::invalid(format!("hist_loss needs [H, W, C] images, got {shape:?}"))),
        };
        if mask.shape() != [h, w] {
            return Err(Error::invalid(format!(
                "mask shape {:?} does not match image {h}x{w}",
                mask.shape()
            )));
        }
        let tape = img.tape();
        let weights = tape.constant(mask.reshape(&[h * w])?);
        let flat = img.reshape(&[h * w, c])?;
        let cdfs = (0..c)
            .map(|ch| {
                let hist = soft_histogram(flat.column(ch)?, weights, params)?;
                Ok(hist.cumsum(0)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((cdfs, c))
    };
    let (cdf_a, ca) = side(a, mask_a)?;
    let (cdf_b, cb) = side(b, mask_b)?;
    if ca != cb {
        return Err(Error::invalid(format!("channel counts differ: {ca} vs {cb}")));
    }
    let inv_k = T::lit(1.0 / params.bins as f64);
    let mut total: Option<Var<'t, T>> = None;
    for (x, y) in cdf_a.into_iter().zip(cdf_b) {
        let term = x.sub(y)?.abs()?.sum()?.scale(inv_k)?;
        total = Some(match total {
            Some(t) => t.add(term)?,
            None => term,
        });
    }
    let total = total.expect("at least one channel");
    Ok(total.scale(T::lit(1.0 / ca as f64))?)
}
