//! Orthonormal 8x8 DCT-II.

use super::{Array, NumericsError};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DctDirection {
    Forward,
    Inverse,
}

impl DctDirection {
    pub fn inverse(self) -> Self {
        match self {
            Self::Forward => Self::Inverse,
            Self::Inverse => Self::Forward,
        }
    }
}

/// Basis matrix `C[u][x] = a(u) cos((2x + 1) u pi / 16)`, `a(0) = sqrt(1/8)`, else `sqrt(2/8)`.
fn basis<T: Real>() -> [[T; 8]; 8] {
    let mut c = [[T::zero(); 8]; 8];
    for (u, row) in c.iter_mut().enumerate() {
        let a = if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
        for (x, v) in row.iter_mut().enumerate() {
            *v = T::lit(a * ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos());
        }
    }
    c
}

fn transform_block<T: Real>(c: &[[T; 8]; 8], block: &[T; 64], direction: DctDirection) -> [T; 64] {
    let mut tmp = [T::zero(); 64];
    let mut out = [T::zero(); 64];
    // Forward: C X C^T. Inverse: C^T X C.
    let m = |i: usize, k: usize| match direction {
        DctDirection::Forward => c[i][k],
        DctDirection::Inverse => c[k][i],
    };
    for i in 0..8 {
        for j in 0..8 {
            tmp[i * 8 + j] = (0..8).map(|k| m(i, k) * block[k * 8 + j]).sum();
        }
    }
    for i in 0..8 {
        for j in 0..8 {
            out[i * 8 + j] = (0..8).map(|k| tmp[i * 8 + k] * m(j, k)).sum();
        }
    }
    out
}

fn check_block<T: Real>(block: &Array<T>) -> Result<[T; 64], NumericsError> {
    if block.shape() != [8, 8] {
        return Err(NumericsError::ShapeMismatch {
            op: "dct8",
            expected: vec![8, 8],
            got: block.shape().to_vec(),
        });
    }
    let mut b = [T::zero(); 64];
    b.copy_from_slice(block.data());
    Ok(b)
}

pub fn dct8_forward<T: Real>(block: &Array<T>) -> Result<Array<T>, NumericsError> {
    let b = check_block(block)?;
    let out = transform_block(&basis(), &b, DctDirection::Forward);
    Ok(Array::from_parts(vec![8, 8], out.to_vec()))
}

pub fn dct8_inverse<T: Real>(block: &Array<T>) -> Result<Array<T>, NumericsError> {
    let b = check_block(block)?;
    let out = transform_block(&basis(), &b, DctDirection::Inverse);
    Ok(Array::from_parts(vec![8, 8], out.to_vec()))
}

/// Applies the block transform to every 8x8 tile of every channel of an
/// `[H, W, C]` array. Dimensions are validated by the caller.
pub(crate) fn block_dct_planes<T: Real>(image: &Array<T>, direction: DctDirection) -> Array<T> {
    let (h, w, ch) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let c = basis::<T>();
    let src = image.data();
    let mut out = vec![T::zero(); src.len()];
    let mut block = [T::zero(); 64];
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            for k in 0..ch {
                for y in 0..8 {
                    for x in 0..8 {
                        block[y * 8 + x] = src[((by + y) * w + bx + x) * ch + k];
                    }
                }
                let t = transform_block(&c, &block, direction);
                for y in 0..8 {
                    for x in 0..8 {
                        out[((by + y) * w + bx + x) * ch + k] = t[y * 8 + x];
                    }
                }
            }
        }
    }
    Array::from_parts(image.shape().to_vec(), out)
}
