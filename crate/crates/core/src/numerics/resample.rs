//! Image resampling on `[H, W, C]` arrays.

use super::{Array, NumericsError};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy)]
struct Tap<T> {
    i0: usize,
    i1: usize,
    frac: T,
}

fn linear_taps<T: Real>(n_in: usize, n_out: usize) -> Vec<Tap<T>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            Tap {
                i0,
                i1,
                frac: T::lit(src - i0 as f64),
            }
        })
        .collect()
}

/// Precomputed bilinear sampling positions. The map is linear, so the
/// adjoint scatters with the same weights.
#[derive(Debug, Clone)]
pub(crate) struct BilinearPlan<T> {
    w_in: usize,
    h_in: usize,
    rows: Vec<Tap<T>>,
    cols: Vec<Tap<T>>,
}

impl<T: Real> BilinearPlan<T> {
    pub(crate) fn new(h_in: usize, w_in: usize, h_out: usize, w_out: usize) -> Self {
        Self {
            w_in,
            h_in,
            rows: linear_taps(h_in, h_out),
            cols: linear_taps(w_in, w_out),
        }
    }

    fn weights(&self, r: &Tap<T>, c: &Tap<T>) -> [(usize, T); 4] {
        let one = T::one();
        let w = self.w_in;
        [
            (r.i0 * w + c.i0, (one - r.frac) * (one - c.frac)),
            (r.i0 * w + c.i1, (one - r.frac) * c.frac),
            (r.i1 * w + c.i0, r.frac * (one - c.frac)),
            (r.i1 * w + c.i1, r.frac * c.frac),
        ]
    }

    pub(crate) fn apply(&self, src: &[T], ch: usize) -> Vec<T> {
        let mut out = Vec::with_capacity(self.rows.len() * self.cols.len() * ch);
        for r in &self.rows {
            for c in &self.cols {
                let taps = self.weights(r, c);
                for k in 0..ch {
                    out.push(taps.iter().map(|&(p, wt)| wt * src[p * ch + k]).sum());
                }
            }
        }
        out
    }

    pub(crate) fn apply_adjoint(&self, grad: &[T], ch: usize) -> Vec<T> {
        let mut out = vec![T::zero(); self.h_in * self.w_in * ch];
        let mut o = 0;
        for r in &self.rows {
            for c in &self.cols {
                let taps = self.weights(r, c);
                for k in 0..ch {
                    for &(p, wt) in &taps {
                        out[p * ch + k] += wt * grad[o + k];
                    }
                }
                o += ch;
            }
        }
        out
    }
}

fn dims<T: Real>(op: &'static str, image: &Array<T>) -> Result<(usize, usize, usize), NumericsError> {
    match *image.shape() {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(NumericsError::InvalidArgument {
            op,
            reason: format!("expected an [H, W, C] array, got {:?}", image.shape()),
        }),
    }
}

fn check_out(op: &'static str, h: usize, w: usize) -> Result<(), NumericsError> {
    if h == 0 || w == 0 {
        return Err(NumericsError::InvalidArgument {
            op,
            reason: "output size must be positive".into(),
        });
    }
    Ok(())
}

pub fn resize_bilinear<T: Real>(image: &Array<T>, out_h: usize, out_w: usize) -> Result<Array<T>, NumericsError> {
    let (h, w, c) = dims("resize_bilinear", image)?;
    check_out("resize_bilinear", out_h, out_w)?;
    let plan = BilinearPlan::new(h, w, out_h, out_w);
    Ok(Array::from_parts(vec![out_h, out_w, c], plan.apply(image.data(), c)))
}

pub fn upsample_nearest<T: Real>(image: &Array<T>, factor: usize) -> Result<Array<T>, NumericsError> {
    let (h, w, c) = dims("upsample_nearest", image)?;
    check_out("upsample_nearest", factor, factor)?;
    let (oh, ow) = (h * factor, w * factor);
    let src = image.data();
    let mut out = Vec::with_capacity(oh * ow * c);
    for y in 0..oh {
        for x in 0..ow {
            let s = ((y / factor) * w + x / factor) * c;
            out.extend_from_slice(&src[s..s + c]);
        }
    }
    Ok(Array::from_parts(vec![oh, ow, c], out))
}

/// Keys cubic convolution kernel with `a = -0.5`.
fn cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        (A + 2.0) * x * x * x - (A + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        A * x * x * x - 5.0 * A * x * x + 8.0 * A * x - 4.0 * A
    } else {
        0.0
    }
}

/// Normalised cubic weights for one axis; the kernel is stretched by the
/// scale factor when shrinking so the result is antialiased.
fn cubic_taps(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_in as f64 / n_out as f64;
    let stretch = scale.max(1.0);
    let support = 2.0 * stretch;
    (0..n_out)
        .map(|o| {
            let centre = (o as f64 + 0.5) * scale - 0.5;
            let lo = (centre - support).floor() as i64;
            let hi = (centre + support).ceil() as i64;
            let mut taps: Vec<(usize, f64)> = Vec::new();
            for i in lo..=hi {
                let wt = cubic((i as f64 - centre) / stretch);
                if wt == 0.0 {
                    continue;
                }
                let idx = i.clamp(0, n_in as i64 - 1) as usize;
                match taps.iter_mut().find(|(j, _)| *j == idx) {
                    Some(t) => t.1 += wt,
                    None => taps.push((idx, wt)),
                }
            }
            let total: f64 = taps.iter().map(|t| t.1).sum();
            taps.iter_mut().for_each(|t| t.1 /= total);
            taps
        })
        .collect()
}

/// Antialiased bicubic resize. Forward only; used to synthesize degraded data.
pub fn resize_bicubic<T: Real>(image: &Array<T>, out_h: usize, out_w: usize) -> Result<Array<T>, NumericsError> {
    let (h, w, c) = dims("resize_bicubic", image)?;
    check_out("resize_bicubic", out_h, out_w)?;
    let rows = cubic_taps(h, out_h);
    let cols = cubic_taps(w, out_w);
    let src = image.data();
    let mut tmp = vec![0.0f64; h * out_w * c];
    for y in 0..h {
        for (x, taps) in cols.iter().enumerate() {
            for k in 0..c {
                tmp[(y * out_w + x) * c + k] = taps
                    .iter()
                    .map(|&(i, wt)| wt * src[(y * w + i) * c + k].to_f64_lossy())
                    .sum();
            }
        }
    }
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for taps in &rows {
        for x in 0..out_w {
            for k in 0..c {
                let v: f64 = taps.iter().map(|&(i, wt)| wt * tmp[(i * out_w + x) * c + k]).sum();
                out.push(T::lit(v));
            }
        }
    }
    Array::new(vec![out_h, out_w, c], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_images_stay_constant() {
        let img = Array::full(&[8, 8, 3], 0.25f64);
        for out in [
            resize_bilinear(&img, 3, 5).unwrap(),
            resize_bicubic(&img, 2, 2).unwrap(),
            resize_bicubic(&img, 16, 16).unwrap(),
            upsample_nearest(&img, 2).unwrap(),
        ] {
            assert!(out.data().iter().all(|v| (v - 0.25).abs() < 1e-12));
        }
    }

    #[test]
    fn bilinear_halving_averages_pairs() {
        let img = Array::from_fn(&[1, 4, 1], |i| i as f64).unwrap();
        let out = resize_bilinear(&img, 1, 2).unwrap();
        assert_eq!(out.data(), &[0.5, 2.5]);
    }

    #[test]
    fn nearest_replicates() {
        let img = Array::new(vec![1, 2, 1], vec![1.0, 2.0]).unwrap();
        let out = upsample_nearest(&img, 2).unwrap();
        assert_eq!(out.shape(), &[2, 4, 1]);
        assert_eq!(out.data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn bilinear_adjoint_matches_transpose() {
        // <P x, y> == <x, P^T y>
        let plan = BilinearPlan::<f64>::new(5, 7, 3, 4);
        let x: Vec<f64> = (0..35 * 2).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..12 * 2).map(|i| (i as f64 * 0.91).cos()).collect();
        let px = plan.apply(&x, 2);
        let pty = plan.apply_adjoint(&y, 2);
        let lhs: f64 = px.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&pty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
