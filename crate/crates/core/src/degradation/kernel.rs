use crate::error::{Error, Result};
use crate::numerics::Array;

/// Normalised isotropic Gaussian, `exp(-r^2 / 2 sigma^2)` sampled on a
/// `size x size` grid centred on the middle tap.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<Array<f64>> {
    if size == 0 || size.is_multiple_of(2) {
        return Err(Error::invalid(format!("kernel size must be odd, got {size}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("kernel sigma must be positive, got {sigma}")));
    }
    let c = (size / 2) as f64;
    let mut data: Vec<f64> = (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as f64 - c, (i % size) as f64 - c);
            (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = data.iter().sum();
    data.iter_mut().for_each(|v| *v /= total);
    Ok(Array::new(vec![size, size], data)?)
}
