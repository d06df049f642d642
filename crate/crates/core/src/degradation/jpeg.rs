//! Differentiable JPEG surrogate: colour transform, 8x8 DCT, quantisation with
//! soft rounding, and the inverse path. No chroma subsampling.

use crate::error::{Error, Result};
use crate::numerics::{Array, DctDirection, Var};
use crate::scalar::Real;

#[rustfmt::skip]
const LUMA_BASE: [u32; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61,
    12, 12, 14, 19, 26, 58, 60, 55,
    14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62,
    18, 22, 37, 56, 68, 109, 103, 77,
    24, 35, 55, 64, 81, 104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
];

#[rustfmt::skip]
const CHROMA_BASE: [u32; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99,
    18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// Full-range BT.601 RGB -> YCbCr (rows Y, Cb, Cr), without the chroma offset.
const RGB_TO_YCC: [[f64; 3]; 3] = [
    [0.299, 0.587, 0.114],
    [-0.168_736, -0.331_264, 0.5],
    [0.5, -0.418_688, -0.081_312],
];

/// Quantisation step for quality `q`: `floor((base * scale + 50) / 100)`,
/// `scale = 5000 / q` below 50 and `200 - 2q` otherwise, at least 1.
pub fn scaled_table(base: &[u32; 64], quality: u32) -> Result<[f64; 64]> {
    if !(1..=100).contains(&quality) {
        return Err(Error::invalid(format!("JPEG quality must be in 1..=100, got {quality}")));
    }
    let scale = if quality < 50 { 5000 / quality } else { 200 - 2 * quality };
    let mut out = [0.0; 64];
    for (o, &b) in out.iter_mut().zip(base) {
        *o = ((b * scale + 50) / 100).max(1) as f64;
    }
    Ok(out)
}

pub fn luma_table(quality: u32) -> Result<[f64; 64]> {
    scaled_table(&LUMA_BASE, quality)
}

pub fn chroma_table(quality: u32) -> Result<[f64; 64]> {
    scaled_table(&CHROMA_BASE, quality)
}

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut inv = [[0.0; 3]; 3];
    for (i, row) in inv.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            // Cofactor of m[j][i].
            let (r0, r1) = match j {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let (c0, c1) = match i {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let minor = m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            *v = sign * minor / det;
        }
    }
    inv
}

/// `[3, 3]` right-multiplication matrix `M` such that `row · M` applies `lin` scaled by `gain`.
fn right_matrix<T: Real>(lin: &[[f64; 3]; 3], gain: f64) -> Array<T> {
    // M[k][j] = lin[j][k]
    Array::from_fn(&[3, 3], |i| T::lit(lin[i % 3][i / 3] * gain)).expect("finite colour matrix")
}

/// Per-pixel constant tiled over an `[N, 3]` or `[H, W, 3]` layout.
fn tiled<T: Real>(shape: &[usize], per_channel: [f64; 3]) -> Array<T> {
    Array::from_fn(shape, |i| T::lit(per_channel[i % 3])).expect("finite constant")
}

/// Quantisation step for every coefficient of an `[H, W, 3]` YCbCr plane stack.
fn step_plane<T: Real>(h: usize, w: usize, quality: u32, reciprocal: bool) -> Result<Array<T>> {
    let (ql, qc) = (luma_table(quality)?, chroma_table(quality)?);
    Ok(Array::from_fn(&[h, w, 3], |i| {
        let (pix, ch) = (i / 3, i % 3);
        let (y, x) = (pix / w, pix % w);
        let q = if ch == 0 { ql } else { qc }[(y % 8) * 8 + x % 8];
        T::lit(if reciprocal { 1.0 / q } else { q })
    })?)
}

/// Differentiable JPEG round trip of an `[H, W, 3]` image with values in
/// `[0, 1]`. Output is not clamped.
pub fn soft_jpeg<'t, T: Real>(image: Var<'t, T>, quality: u32) -> Result<Var<'t, T>> {
    let shape = image.shape();
    let (h, w) = match *shape.as_slice() {
        [h, w, 3] => (h, w),
        _ => return Err(Error::invalid(format!("soft_jpeg needs an [H, W, 3] image, got {shape:?}"))),
    };
    if h % 8 != 0 || w % 8 != 0 {
        return Err(Error::invalid(format!(
            "soft_jpeg needs dimensions divisible by 8, got {h}x{w}"
        )));
    }
    let tape = image.tape();
    let n = h * w;

    // [0,1] RGB -> level-shifted YCbCr in 0..255 units.
    let to_ycc = tape.constant(right_matrix::<T>(&RGB_TO_YCC, 255.0));
    let shift = tape.constant(tiled::<T>(&[n, 3], [-128.0, 0.0, 0.0]));
    let ycc = image.reshape(&[n, 3])?.matmul(to_ycc)?.add(shift)?;

    let coeffs = ycc.reshape(&[h, w, 3])?.block_dct(DctDirection::Forward)?;
    let inv_step = tape.constant(step_plane::<T>(h, w, quality, true)?);
    let step = tape.constant(step_plane::<T>(h, w, quality, false)?);
    let dequant = coeffs.mul(inv_step)?.soft_round()?.mul(step)?;
    let planes = dequant.block_dct(DctDirection::Inverse)?;

    let from_ycc = tape.constant(right_matrix::<T>(&invert3(&RGB_TO_YCC), 1.0 / 255.0));
    let unshift = tape.constant(tiled::<T>(&[n, 3], [128.0 / 255.0, 128.0 / 255.0, 128.0 / 255.0]));
    let rgb = planes
        .reshape(&[n, 3])?
        .matmul(from_ycc)?
        .add(unshift)?
        .reshape(&[h, w, 3])?;
    Ok(rgb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tape;

    #[test]
    fn quality_scaling() {
        assert!(luma_table(100).unwrap().iter().all(|&q| q == 1.0));
        let q50 = luma_table(50).unwrap();
        assert_eq!(q50[0], 16.0);
        assert_eq!(q50[63], 99.0);
        // q=10: scale 500 -> 16 * 5 = 80
        assert_eq!(luma_table(10).unwrap()[0], 80.0);
        // q=75: scale 50 -> (16*50+50)/100 = 8
        assert_eq!(luma_table(75).unwrap()[0], 8.0);
        assert!(luma_table(0).is_err());
        assert!(luma_table(101).is_err());
    }

    #[test]
    fn colour_transform_inverts() {
        let inv = invert3(&RGB_TO_YCC);
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| RGB_TO_YCC[i][k] * inv[k][j]).sum();
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
        // Standard inverse coefficient for R from Cr.
        assert!((inv[0][2] - 1.402).abs() < 1e-4);
    }

    #[test]
    fn mid_gray_survives_any_quality() {
        for q in [1, 5, 10, 25, 50, 75, 90, 100] {
            let tape = Tape::<f64>::new();
            let img = tape.constant(Array::full(&[16, 16, 3], 0.5));
            let out = soft_jpeg(img, q).unwrap().value();
            let dev = out.data().iter().map(|v| (v - 0.5).abs()).fold(0.0, f64::max);
            assert!(dev <= 2.0 / 255.0, "q={q} deviation {dev}");
        }
    }

    #[test]
    fn quality_100_is_near_lossless() {
        use rand::{Rng, SeedableRng};
        for seed in 0..5 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x = Array::from_fn(&[32, 32, 3], |_| rng.random::<f64>()).unwrap();
            let tape = Tape::new();
            let y = soft_jpeg(tape.constant(x.clone()), 100).unwrap().value();
            let mse = x.zip_map(&y, |a, b| (a - b) * (a - b)).unwrap().sum() / x.len() as f64;
            let psnr = 10.0 * (1.0 / mse).log10();
            assert!(psnr >= 40.0, "seed {seed}: {psnr} dB");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        use crate::numerics::gradcheck::{check_gradient, FD_STEP};
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let x = Array::from_fn(&[8, 8, 3], |_| rng.random::<f64>()).unwrap();
        let c = Array::from_fn(&[8, 8, 3], |_| rng.random::<f64>() - 0.5).unwrap();
        let report = check_gradient(
            |v| {
                let w = v.tape().constant(c.clone());
                soft_jpeg(v, 50)?.mul(w).map_err(Error::from)?.sum().map_err(Error::from)
            },
            &x,
            FD_STEP,
        )
        .unwrap();
        assert!(report.passes(1e-4), "{}", report.max_rel_error);
    }

    #[test]
    fn rejects_bad_geometry() {
        let tape = Tape::<f64>::new();
        assert!(soft_jpeg(tape.constant(Array::full(&[12, 16, 3], 0.5)), 50).is_err());
        assert!(soft_jpeg(tape.constant(Array::full(&[16, 16, 1], 0.5)), 50).is_err());
    }
}
