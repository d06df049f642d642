//! Differentiable operators. Every operator validates shapes up front and
//! returns an error instead of panicking on bad input.

use super::dct::{block_dct_planes, DctDirection};
use super::resample::BilinearPlan;
use super::{Array, NumericsError, Var};
use crate::scalar::Real;

/// Norm below which a vector has no usable direction.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding, output has the input's spatial size.
    SameZero,
    /// No padding, output shrinks by `k - 1`.
    Valid,
}

fn same_shape(op: &'static str, a: &Array<impl Real>, b: &Array<impl Real>) -> Result<(), NumericsError> {
    if a.shape() != b.shape() {
        return Err(NumericsError::ShapeMismatch {
            op,
            expected: a.shape().to_vec(),
            got: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn hwc(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize), NumericsError> {
    match *shape {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(NumericsError::InvalidArgument {
            op,
            reason: format!("expected an [H, W, C] array, got {shape:?}"),
        }),
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Nearest integer with ties away from zero.
pub fn round_half_away<T: Real>(x: T) -> T {
    // `Float::round` already rounds half away from zero.
    x.round()
}

/// Cubic soft rounding `n + (x - n)^3`, `n` the nearest integer.
pub fn soft_round_value<T: Real>(x: T) -> T {
    let n = round_half_away(x);
    let r = x - n;
    n + r * r * r
}

impl<'t, T: Real> Var<'t, T> {
    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>, NumericsError> {
        self.tape().record(
            "add",
            &[self, other],
            |x| {
                same_shape("add", x[0], x[1])?;
                x[0].zip_map(x[1], |a, b| a + b)
            },
            Box::new(|ctx| vec![Some(ctx.grad.to_vec()), Some(ctx.grad.to_vec())]),
        )
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>, NumericsError> {
        self.tape().record(
            "sub",
            &[self, other],
            |x| {
                same_shape("sub", x[0], x[1])?;
                x[0].zip_map(x[1], |a, b| a - b)
            },
            Box::new(|ctx| {
                vec![
                    Some(ctx.grad.to_vec()),
                    Some(ctx.grad.iter().map(|&g| -g).collect()),
                ]
            }),
        )
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>, NumericsError> {
        self.tape().record(
            "mul",
            &[self, other],
            |x| {
                same_shape("mul", x[0], x[1])?;
                x[0].zip_map(x[1], |a, b| a * b)
            },
            Box::new(|ctx| {
                let (a, b) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                let ga = ctx
                    .needs(0)
                    .then(|| ctx.grad.iter().zip(b).map(|(&g, &b)| g * b).collect());
                let gb = ctx
                    .needs(1)
                    .then(|| ctx.grad.iter().zip(a).map(|(&g, &a)| g * a).collect());
                vec![ga, gb]
            }),
        )
    }

    pub fn scale(self, c: T) -> Result<Var<'t, T>, NumericsError> {
        self.tape().record(
            "scale",
            &[self],
            |x| x[0].map(|v| v * c),
            Box::new(move |ctx| vec![Some(ctx.grad.iter().map(|&g| g * c).collect())]),
        )
    }

    pub fn add_scalar(self, c: T) -> Result<Var<'t, T>, NumericsError> {
        self.tape().record(
            "add_scalar",
            &[self],
            |x| x[0].map(|v| v + c),
            Box::new(|ctx| vec![Some(ctx.grad.to_vec())]),
        )
    }

    pub fn neg(self) -> Result<Var<'t, T>, NumericsError> {
        self.scale(-T::one())
    }

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>, NumericsError> {
        self.tape().record(
            "matmul",
            &[self, other],
            |x| {
                let (a, b) = (x[0], x[1]);
                let (m, k, k2, n) = match (a.shape(), b.shape()) {
                    (&[m, k], &[k2, n]) => (m, k, k2, n),
                    _ => {
                        return Err(NumericsError::InvalidArgument {
                            op: "matmul",
                            reason: format!("operands must be 2-D, got {:?} and {:?}", a.shape(), b.shape()),
                        })
                    }
                };
                if k != k2 {
                    return Err(NumericsError::ShapeMismatch {
                        op: "matmul",
                        expected: vec![k, n],
                        got: b.shape().to_vec(),
                    });
                }
                Ok(Array::from_parts(vec![m, n], matmul_nn(a.data(), b.data(), m, k, n)))
            },
            Box::new(|ctx| {
                let (a, b) = (ctx.inputs[0], ctx.inputs[1]);
                let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                let g = ctx.grad;
                // dA = G B^T, dB = A^T G
                let ga = ctx.needs(0).then(|| {
                    let mut out = vec![T::zero(); m * k];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &b.data()[p * n..(p + 1) * n];
                            out[i * k + p] = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
                        }
                    }
                    out
                });
                let gb = ctx.needs(1).then(|| {
                    let mut out = vec![T::zero(); k * n];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let av = a.data()[i * k + p];
                            if av == T::zero() {
                                continue;
                            }
                            let orow = &mut out[p * n..(p + 1) * n];
                            orow.iter_mut().zip(grow).for_each(|(o, &x)| *o += av * x);
                        }
                    }
                    out
                });
                vec![ga, gb]
            }),
        )
    }

    pub fn sum(self) -> Result<Var<'t, T>, NumericsError> {
        self.tape().record(
            "sum",
            &[self],
            |x| Ok(Array::raw_scalar(x[0].sum())),
            Box::new(|ctx| vec![Some(vec![ctx.grad[0]; ctx.inputs[0].len()])]),
        )
    }

    pub fn mean(self) -> Result<Var<'t, T>, NumericsError> {
        self.tape().record(
            "mean",
            &[self],
            |x| Ok(Array::raw_scalar(x[0].sum() / T::lit(x[0].len() as f64))),
            Box::new(|ctx| {
                let n = ctx.inputs[0].len();
                vec![Some(vec![ctx.grad[0] / T::lit(n as f64); n])]
            }),
        )
    }

    /// Elementwise absolute value; the subgradient at 0 is 0.
    pub fn abs(self) -> Result<Var<'t, T>, NumericsError> {
        self.tape().record(
            "abs",
            &[self],
            |x| x[0].map(|v| v.abs()),
            Box::new(|ctx| {
                let g = ctx
                    .grad
                    .iter()
                    .zip(ctx.inputs[0].data())
                    .map(|(&g, &x)| {
                        if x > T::zero() {
                            g
                        } else if x < T::zero() {
                            -g
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                vec![Some(g)]
            }),
        )
    }

    /// Squared Frobenius norm.
    pub fn sq_norm(self) -> Result<Var<'t, T>, NumericsError> {
        self.tape().record(
            "sq_norm",
            &[self],
            |x| Ok(Array::raw_scalar(x[0].dot(x[0]))),
            Box::new(|ctx| {
                let two_g = ctx.grad[0] + ctx.grad[0];
                vec![Some(ctx.inputs[0].data().iter().map(|&x| two_g * x).collect())]
            }),
        )
    }

    pub fn sigmoid(self) -> Result<Var<'t, T>, NumericsError> {
        self.tape().record(
            "sigmoid",
            &[self],
            |x| x[0].map(sigmoid),
            Box::new(|ctx| {
                let g = ctx
                    .grad
                    .iter()
                    .zip(ctx.output.data())
                    .map(|(&g, &s)| g * s * (T::one() - s))
                    .collect();
                vec![Some(g)]
            }),
        )
    }

    /// `tanh(x) = 2 sigmoid(2x) - 1`, composed from primitives.
    pub fn tanh(self) -> Result<Var<'t, T>, NumericsError> {
        let two = T::lit(2.0);
        self.scale(two)?
            .sigmoid()?
            .scale(two)?
            .add_scalar(-T::one())
    }

    /// Inclusive cumulative sum along `axis`.
    pub fn cumsum(self, axis: usize) -> Result<Var<'t, T>, NumericsError> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(NumericsError::InvalidArgument {
                op: "cumsum",
                reason: format!("axis {axis} out of range for shape {shape:?}"),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        self.tape().record(
            "cumsum",
            &[self],
            |x| {
                let mut out = x[0].data().to_vec();
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        for j in 1..len {
                            let prev = out[base + (j - 1) * inner];
                            out[base + j * inner] += prev;
                        }
                    }
                }
                Ok(Array::from_parts(x[0].shape().to_vec(), out))
            },
            Box::new(move |ctx| {
                // Adjoint of an inclusive prefix sum is a suffix sum.
                let mut g = ctx.grad.to_vec();
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        for j in (0..len.saturating_sub(1)).rev() {
                            let next = g[base + (j + 1) * inner];
                            g[base + j * inner] += next;
                        }
                    }
                }
                vec![Some(g)]
            }),
        )
    }

    /// Depthwise 2-D convolution of an `[H, W, C]` image with a `[kh, kw]` kernel,
    /// the same kernel applied to every channel.
    pub fn conv2d(self, kernel: Var<'t, T>, padding: Padding) -> Result<Var<'t, T>, NumericsError> {
        let (h, w, _) = hwc("conv2d", &self.shape())?;
        let kshape = kernel.shape();
        let (kh, kw) = match *kshape.as_slice() {
            [kh, kw] => (kh, kw),
            _ => {
                return Err(NumericsError::InvalidArgument {
                    op: "conv2d",
                    reason: format!("kernel must be 2-D, got {kshape:?}"),
                })
            }
        };
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(NumericsError::InvalidArgument {
                op: "conv2d",
                reason: format!("kernel dims must be odd, got {kh}x{kw}"),
            });
        }
        let geom = match padding {
            Padding::SameZero => ConvGeom {
                oh: h,
                ow: w,
                off_y: kh / 2,
                off_x: kw / 2,
                kh,
                kw,
            },
            Padding::Valid => {
                if kh > h || kw > w {
                    return Err(NumericsError::InvalidArgument {
                        op: "conv2d",
                        reason: format!("kernel {kh}x{kw} larger than image {h}x{w}"),
                    });
                }
                ConvGeom {
                    oh: h - kh + 1,
                    ow: w - kw + 1,
                    off_y: kh - 1,
                    off_x: kw - 1,
                    kh,
                    kw,
                }
            }
        };
        self.tape().record(
            "conv2d",
            &[self, kernel],
            move |x| Ok(geom.forward(x[0], x[1])),
            Box::new(move |ctx| {
                let (img, k) = (ctx.inputs[0], ctx.inputs[1]);
                let gi = ctx.needs(0).then(|| geom.grad_input(img, k, ctx.grad));
                let gk = ctx.needs(1).then(|| geom.grad_kernel(img, ctx.grad));
                vec![gi, gk]
            }),
        )
    }

    /// Box average over non-overlapping `s x s` tiles of an `[H, W, C]` image.
    pub fn area_downsample(self, s: usize) -> Result<Var<'t, T>, NumericsError> {
        let (h, w, c) = hwc("area_downsample", &self.shape())?;
        if s == 0 || h % s != 0 || w % s != 0 {
            return Err(NumericsError::InvalidArgument {
                op: "area_downsample",
                reason: format!("factor {s} must divide {h}x{w}"),
            });
        }
        let (oh, ow) = (h / s, w / s);
        let inv = T::one() / T::lit((s * s) as f64);
        self.tape().record(
            "area_downsample",
            &[self],
            move |x| {
                let src = x[0].data();
                let mut out = vec![T::zero(); oh * ow * c];
                for y in 0..h {
                    for xx in 0..w {
                        let o = ((y / s) * ow + xx / s) * c;
                        let i = (y * w + xx) * c;
                        for ch in 0..c {
                            out[o + ch] += src[i + ch];
                        }
                    }
                }
                out.iter_mut().for_each(|v| *v *= inv);
                Ok(Array::from_parts(vec![oh, ow, c], out))
            },
            Box::new(move |ctx| {
                let mut g = vec![T::zero(); h * w * c];
                for y in 0..h {
                    for xx in 0..w {
                        let o = ((y / s) * ow + xx / s) * c;
                        let i = (y * w + xx) * c;
                        for ch in 0..c {
                            g[i + ch] = ctx.grad[o + ch] * inv;
                        }
                    }
                }
                vec![Some(g)]
            }),
        )
    }

    /// Differentiable rounding surrogate, see [`soft_round_value`].
    pub fn soft_round(self) -> Result<Var<'t, T>, NumericsError> {
        self.tape().record(
            "soft_round",
            &[self],
            |x| x[0].map(soft_round_value),
            Box::new(|ctx| {
                let three = T::lit(3.0);
                let g = ctx
                    .grad
                    .iter()
                    .zip(ctx.inputs[0].data())
                    .map(|(&g, &x)| {
                        let r = x - round_half_away(x);
                        g * three * r * r
                    })
                    .collect();
                vec![Some(g)]
            }),
        )
    }

    /// Cosine of the angle between two equally sized arrays, viewed as flat vectors.
    pub fn cosine_similarity(self, other: Var<'t, T>) -> Result<Var<'t, T>, NumericsError> {
        let eps = T::lit(DEGENERATE_NORM);
        self.tape().record(
            "cosine_similarity",
            &[self, other],
            move |x| {
                let (a, b) = (x[0], x[1]);
                if a.len() != b.len() {
                    return Err(NumericsError::ShapeMismatch {
                        op: "cosine_similarity",
                        expected: a.shape().to_vec(),
                        got: b.shape().to_vec(),
                    });
                }
                let (na, nb) = (a.norm(), b.norm());
                for n in [na, nb] {
                    if n <= eps {
                        return Err(NumericsError::DegenerateVector {
                            op: "cosine_similarity",
                            norm: n.to_f64_lossy(),
                        });
                    }
                }
                let c = a.dot(b) / (na * nb);
                Ok(Array::raw_scalar(c.max(-T::one()).min(T::one())))
            },
            Box::new(|ctx| {
                let (a, b) = (ctx.inputs[0], ctx.inputs[1]);
                let (na, nb) = (a.norm(), b.norm());
                let cos = a.dot(b) / (na * nb);
                let g = ctx.grad[0];
                let grad_for = |x: &Array<T>, y: &Array<T>, nx: T, ny: T| -> Vec<T> {
                    x.data()
                        .iter()
                        .zip(y.data())
                        .map(|(&xi, &yi)| g * (yi / (nx * ny) - cos * xi / (nx * nx)))
                        .collect()
                };
                vec![
                    ctx.needs(0).then(|| grad_for(a, b, na, nb)),
                    ctx.needs(1).then(|| grad_for(b, a, nb, na)),
                ]
            }),
        )
    }

    /// Scales the array to unit Euclidean norm.
    pub fn l2_normalize(self) -> Result<Var<'t, T>, NumericsError> {
        let eps = T::lit(DEGENERATE_NORM);
        self.tape().record(
            "l2_normalize",
            &[self],
            move |x| {
                let n = x[0].norm();
                if n <= eps {
                    return Err(NumericsError::DegenerateVector {
                        op: "l2_normalize",
                        norm: n.to_f64_lossy(),
                    });
                }
                x[0].map(|v| v / n)
            },
            Box::new(|ctx| {
                let n = ctx.inputs[0].norm();
                let y = ctx.output.data();
                let yg: T = y.iter().zip(ctx.grad).map(|(&a, &b)| a * b).sum();
                let g = ctx
                    .grad
                    .iter()
                    .zip(y)
                    .map(|(&g, &y)| (g - y * yg) / n)
                    .collect();
                vec![Some(g)]
            }),
        )
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>, NumericsError> {
        let shape = shape.to_vec();
        self.tape().record(
            "reshape",
            &[self],
            move |x| x[0].reshape(&shape),
            Box::new(|ctx| vec![Some(ctx.grad.to_vec())]),
        )
    }

    /// Column `j` of an `[N, C]` array as an `[N]` array.
    pub fn column(self, j: usize) -> Result<Var<'t, T>, NumericsError> {
        let shape = self.shape();
        let (n, c) = match *shape.as_slice() {
            [n, c] if j < c => (n, c),
            _ => {
                return Err(NumericsError::InvalidArgument {
                    op: "column",
                    reason: format!("column {j} not available in shape {shape:?}"),
                })
            }
        };
        self.tape().record(
            "column",
            &[self],
            move |x| Ok(Array::from_parts(vec![n], (0..n).map(|i| x[0].data()[i * c + j]).collect())),
            Box::new(move |ctx| {
                let mut g = vec![T::zero(); n * c];
                for i in 0..n {
                    g[i * c + j] = ctx.grad[i];
                }
                vec![Some(g)]
            }),
        )
    }

    /// Orthonormal 8x8 block DCT-II (or its inverse) applied per channel of an
    /// `[H, W, C]` array with `H`, `W` multiples of 8.
    pub fn block_dct(self, direction: DctDirection) -> Result<Var<'t, T>, NumericsError> {
        let (h, w, _) = hwc("block_dct", &self.shape())?;
        if h % 8 != 0 || w % 8 != 0 {
            return Err(NumericsError::InvalidArgument {
                op: "block_dct",
                reason: format!("dims {h}x{w} must be multiples of 8"),
            });
        }
        self.tape().record(
            "block_dct",
            &[self],
            move |x| Ok(block_dct_planes(x[0], direction)),
            Box::new(move |ctx| {
                // The transform is orthogonal, so its adjoint is its inverse.
                let g = Array::from_parts(ctx.inputs[0].shape().to_vec(), ctx.grad.to_vec());
                vec![Some(block_dct_planes(&g, direction.inverse()).into_data())]
            }),
        )
    }

    /// Bilinear resize of an `[H, W, C]` image (half-pixel centres, clamped edges).
    pub fn resize_bilinear(self, out_h: usize, out_w: usize) -> Result<Var<'t, T>, NumericsError> {
        let (h, w, c) = hwc("resize_bilinear", &self.shape())?;
        if out_h == 0 || out_w == 0 {
            return Err(NumericsError::InvalidArgument {
                op: "resize_bilinear",
                reason: "output size must be positive".into(),
            });
        }
        let plan = BilinearPlan::new(h, w, out_h, out_w);
        let back = plan.clone();
        self.tape().record(
            "resize_bilinear",
            &[self],
            move |x| Ok(Array::from_parts(vec![out_h, out_w, c], plan.apply(x[0].data(), c))),
            Box::new(move |ctx| vec![Some(back.apply_adjoint(ctx.grad, c))]),
        )
    }
}

/// Row-major `[m, k] x [k, n]` product.
pub(crate) fn matmul_nn<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            orow.iter_mut().zip(brow).for_each(|(o, &x)| *o += av * x);
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    oh: usize,
    ow: usize,
    off_y: usize,
    off_x: usize,
    kh: usize,
    kw: usize,
}

impl ConvGeom {
    /// Source pixel feeding output `(y, x)` through kernel tap `(i, j)`:
    /// `(y + off_y - i, x + off_x - j)` when in range.
    #[inline]
    fn src(&self, y: usize, x: usize, i: usize, j: usize, h: usize, w: usize) -> Option<(usize, usize)> {
        let sy = (y + self.off_y).checked_sub(i)?;
        let sx = (x + self.off_x).checked_sub(j)?;
        (sy < h && sx < w).then_some((sy, sx))
    }

    fn forward<T: Real>(&self, img: &Array<T>, k: &Array<T>) -> Array<T> {
        let (h, w, c) = (img.shape()[0], img.shape()[1], img.shape()[2]);
        let (src, kd) = (img.data(), k.data());
        let mut out = vec![T::zero(); self.oh * self.ow * c];
        for y in 0..self.oh {
            for x in 0..self.ow {
                let o = (y * self.ow + x) * c;
                for i in 0..self.kh {
                    for j in 0..self.kw {
                        let kv = kd[i * self.kw + j];
                        if let Some((sy, sx)) = self.src(y, x, i, j, h, w) {
                            let s = (sy * w + sx) * c;
                            for ch in 0..c {
                                out[o + ch] += kv * src[s + ch];
                            }
                        }
                    }
                }
            }
        }
        Array::from_parts(vec![self.oh, self.ow, c], out)
    }

    fn grad_input<T: Real>(&self, img: &Array<T>, k: &Array<T>, g: &[T]) -> Vec<T> {
        let (h, w, c) = (img.shape()[0], img.shape()[1], img.shape()[2]);
        let kd = k.data();
        let mut out = vec![T::zero(); h * w * c];
        for y in 0..self.oh {
            for x in 0..self.ow {
                let o = (y * self.ow + x) * c;
                for i in 0..self.kh {
                    for j in 0..self.kw {
                        let kv = kd[i * self.kw + j];
                        if let Some((sy, sx)) = self.src(y, x, i, j, h, w) {
                            let s = (sy * w + sx) * c;
                            for ch in 0..c {
                                out[s + ch] += kv * g[o + ch];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn grad_kernel<T: Real>(&self, img: &Array<T>, g: &[T]) -> Vec<T> {
        let (h, w, c) = (img.shape()[0], img.shape()[1], img.shape()[2]);
        let src = img.data();
        let mut out = vec![T::zero(); self.kh * self.kw];
        for y in 0..self.oh {
            for x in 0..self.ow {
                let o = (y * self.ow + x) * c;
                for i in 0..self.kh {
                    for j in 0..self.kw {
                        if let Some((sy, sx)) = self.src(y, x, i, j, h, w) {
                            let s = (sy * w + sx) * c;
                            let acc: T = (0..c).map(|ch| g[o + ch] * src[s + ch]).sum();
                            out[i * self.kw + j] += acc;
                        }
                    }
                }
            }
        }
        out
    }
}
