//! Full-batch logistic regression on standardised features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Standardization {
    /// Centre each dimension, divide all by one pooled standard deviation.
    /// Preserves the geometry of the latent space.
    #[default]
    Pooled,
    /// Centre and scale each dimension separately.
    PerDimension,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitParams {
    pub epochs: usize,
    pub lr: f64,
    #[serde(default)]
    pub standardization: Standardization,
}

impl Default for FitParams {
    fn default() -> Self {
        Self {
            epochs: 1000,
            lr: 1.0,
            standardization: Standardization::Pooled,
        }
    }
}

/// Decision function `<normal, x> + bias` in the original coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    pub normal: Vec<f64>,
    pub bias: f64,
    pub accuracy: f64,
}

impl LinearClassifier {
    pub fn decision(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.normal).map(|(a, b)| a * b).sum::<f64>() + self.bias
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean logistic loss and its gradient with respect to `(weights, bias)`.
pub(crate) fn logistic_loss_and_grad(xs: &[Vec<f64>], ys: &[bool], w: &[f64], b: f64) -> (f64, Vec<f64>, f64) {
    let n = xs.len() as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; w.len()];
    let mut gb = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let z = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b;
        // -log sigma(z) for positives, -log(1 - sigma(z)) for negatives.
        loss += if y { softplus(-z) } else { softplus(z) };
        let r = sigmoid(z) - if y { 1.0 } else { 0.0 };
        gw.iter_mut().zip(x).for_each(|(g, a)| *g += r * a);
        gb += r;
    }
    gw.iter_mut().for_each(|g| *g /= n);
    (loss / n, gw, gb / n)
}

pub fn fit_logistic(xs: &[Vec<f64>], ys: &[bool], params: &FitParams) -> Result<LinearClassifier> {
    let n = xs.len();
    let positive = ys.iter().filter(|&&y| y).count();
    if n != ys.len() || n < 2 || positive == 0 || positive == n {
        return Err(Error::DegenerateLabels {
            positive,
            negative: ys.len() - positive,
        });
    }
    if !(params.lr > 0.0 && params.lr.is_finite()) {
        return Err(Error::invalid(format!("learning rate must be positive, got {}", params.lr)));
    }
    let dim = xs[0].len();
    if dim == 0 || xs.iter().any(|x| x.len() != dim) {
        return Err(Error::invalid("feature vectors must share a positive length"));
    }

    let mean: Vec<f64> = (0..dim).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / n as f64).collect();
    let var: Vec<f64> = (0..dim)
        .map(|j| xs.iter().map(|x| (x[j] - mean[j]).powi(2)).sum::<f64>() / n as f64)
        .collect();
    let scale: Vec<f64> = match params.standardization {
        Standardization::Pooled => {
            let pooled = (var.iter().sum::<f64>() / dim as f64).sqrt();
            vec![if pooled > 0.0 { pooled } else { 1.0 }; dim]
        }
        Standardization::PerDimension => var
            .iter()
            .map(|v| if v.sqrt() > 0.0 { v.sqrt() } else { 1.0 })
            .collect(),
    };
    let zs: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| (0..dim).map(|j| (x[j] - mean[j]) / scale[j]).collect())
        .collect();

    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    for epoch in 0..params.epochs {
        let (loss, gw, gb) = logistic_loss_and_grad(&zs, ys, &w, b);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                what: "logistic loss",
                iteration: epoch,
            });
        }
        w.iter_mut().zip(&gw).for_each(|(wi, g)| *wi -= params.lr * g);
        b -= params.lr * gb;
    }

    let normal: Vec<f64> = w.iter().zip(&scale).map(|(wi, s)| wi / s).collect();
    let bias = b - normal.iter().zip(&mean).map(|(a, m)| a * m).sum::<f64>();
    let mut clf = LinearClassifier {
        normal,
        bias,
        accuracy: 0.0,
    };
    let correct = xs.iter().zip(ys).filter(|(x, &y)| (clf.decision(x) > 0.0) == y).count();
    clf.accuracy = correct as f64 / n as f64;
    if clf.normal.iter().any(|v| !v.is_finite()) || !clf.bias.is_finite() {
        return Err(Error::NonFiniteLoss {
            what: "classifier weights",
            iteration: params.epochs,
        });
    }
    Ok(clf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<Vec<f64>> = (0..30).map(|_| (0..4).map(|_| rng.random::<f64>() - 0.5).collect()).collect();
        let ys: Vec<bool> = (0..30).map(|_| rng.random()).collect();
        let w = vec![0.3, -1.2, 0.7, 2.0];
        let b = 0.4;
        let (_, gw, gb) = logistic_loss_and_grad(&xs, &ys, &w, b);
        let h = 1e-6;
        for j in 0..4 {
            let (mut p, mut m) = (w.clone(), w.clone());
            p[j] += h;
            m[j] -= h;
            let fd = (logistic_loss_and_grad(&xs, &ys, &p, b).0 - logistic_loss_and_grad(&xs, &ys, &m, b).0) / (2.0 * h);
            assert!((fd - gw[j]).abs() < 1e-8);
        }
        let fd = (logistic_loss_and_grad(&xs, &ys, &w, b + h).0 - logistic_loss_and_grad(&xs, &ys, &w, b - h).0) / (2.0 * h);
        assert!((fd - gb).abs() < 1e-8);
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0 && softplus(-1000.0) < 1e-300);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn degenerate_labels() {
        let xs = vec![vec![1.0], vec![2.0]];
        let err = fit_logistic(&xs, &[true, true], &FitParams::default()).unwrap_err();
        assert!(matches!(err, Error::DegenerateLabels { positive: 2, negative: 0 }));
    }

    #[test]
    fn constant_feature_is_harmless() {
        let xs = vec![vec![1.0, 5.0], vec![-1.0, 5.0], vec![2.0, 5.0], vec![-2.0, 5.0]];
        let ys = [true, false, true, false];
        for standardization in [Standardization::Pooled, Standardization::PerDimension] {
            let clf = fit_logistic(&xs, &ys, &FitParams { standardization, ..FitParams::default() }).unwrap();
            assert_eq!(clf.accuracy, 1.0);
            assert!(clf.normal[0] > 0.0);
        }
    }
}
