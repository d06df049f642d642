//! Central finite-difference gradient checking.

use super::{Array, NumericsError, Tape, Var};

/// Default finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Entries whose derivatives are all below this are compared absolutely.
const REL_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub analytic: Array<f64>,
    pub numeric: Array<f64>,
    /// `max_i |a_i - n_i| / max(|a_i|, |n_i|, 1e-7)` over checked entries.
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

fn eval<F, E>(f: &F, x: &Array<f64>) -> Result<f64, E>
where
    F: for<'t> Fn(Var<'t, f64>) -> Result<Var<'t, f64>, E>,
    E: From<NumericsError>,
{
    let tape = Tape::new();
    Ok(f(tape.constant(x.clone()))?.item()?)
}

/// Compares the tape gradient of the scalar `f` at `x` with central
/// differences of step `h`.
pub fn check_gradient<F, E>(f: F, x: &Array<f64>, h: f64) -> Result<GradCheckReport, E>
where
    F: for<'t> Fn(Var<'t, f64>) -> Result<Var<'t, f64>, E>,
    E: From<NumericsError>,
{
    check_gradient_skipping(f, x, h, |_, _| false)
}

/// Like [`check_gradient`], leaving out entries for which `skip(index, value)`
/// holds (inputs sitting on a kink of a piecewise operator).
pub fn check_gradient_skipping<F, E>(
    f: F,
    x: &Array<f64>,
    h: f64,
    skip: impl Fn(usize, f64) -> bool,
) -> Result<GradCheckReport, E>
where
    F: for<'t> Fn(Var<'t, f64>) -> Result<Var<'t, f64>, E>,
    E: From<NumericsError>,
{
    let tape = Tape::new();
    let input = tape.var(x.clone());
    let out = f(input)?;
    let analytic = tape.backward(out)?.get_or_zeros(input);

    let mut numeric = vec![0.0; x.len()];
    let mut probe = x.data().to_vec();
    let mut max_rel_error = 0.0f64;
    let mut worst_index = 0;
    let mut skipped = 0;
    for i in 0..x.len() {
        if skip(i, x.data()[i]) {
            skipped += 1;
            numeric[i] = analytic.data()[i];
            continue;
        }
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = eval(&f, &Array::new(x.shape().to_vec(), probe.clone())?)?;
        probe[i] = orig - h;
        let minus = eval(&f, &Array::new(x.shape().to_vec(), probe.clone())?)?;
        probe[i] = orig;
        numeric[i] = (plus - minus) / (2.0 * h);

        let a = analytic.data()[i];
        let n = numeric[i];
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR);
        if rel > max_rel_error {
            max_rel_error = rel;
            worst_index = i;
        }
    }
    Ok(GradCheckReport {
        analytic,
        numeric: Array::new(x.shape().to_vec(), numeric)?,
        max_rel_error,
        worst_index,
        skipped,
    })
}
