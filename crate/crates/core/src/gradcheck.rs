//! Central finite-difference checks for hand-written backward rules.

use crate::error::{LabError, Result};
use crate::tensor::Tensor;

/// Denominator floor in the relative error.
pub const REL_FLOOR: f64 = 1e-12;

/// Default step for 64-bit checks.
pub const DEFAULT_STEP: f64 = 1e-6;

/// Central-difference gradient of `f` at `point`.
pub fn numeric_gradient<F>(mut f: F, point: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> f64,
{
    if !(h > 0.0) {
        return Err(LabError::Domain(format!("finite-difference step must be > 0, got {h}")));
    }
    let mut probe = point.clone();
    let mut grad = Tensor::zeros(point.shape());
    for i in 0..point.len() {
        let x0 = point.data()[i];
        probe.data_mut()[i] = x0 + h;
        let fp = f(&probe);
        probe.data_mut()[i] = x0 - h;
        let fm = f(&probe);
        probe.data_mut()[i] = x0;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(LabError::Evaluation(format!(
                "non-finite function value at coordinate {i}: f(+h) = {fp}, f(-h) = {fm}"
            )));
        }
        grad.data_mut()[i] = (fp - fm) / (2.0 * h);
    }
    Ok(grad)
}

/// Fourth-order central differences,
/// `(−f(x+2h) + 8f(x+h) − 8f(x−h) + f(x−2h)) / 12h`.
///
/// Truncation error is `O(h⁴)`, so a larger `h` (around `1e-3`) keeps
/// round-off small without giving up accuracy.
pub fn numeric_gradient4<F>(mut f: F, point: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> f64,
{
    if !(h > 0.0) {
        return Err(LabError::Domain(format!("finite-difference step must be > 0, got {h}")));
    }
    let mut probe = point.clone();
    let mut grad = Tensor::zeros(point.shape());
    for i in 0..point.len() {
        let x0 = point.data()[i];
        let mut at = |dx: f64| {
            probe.data_mut()[i] = x0 + dx;
            f(&probe)
        };
        let (p2, p1, m1, m2) = (at(2.0 * h), at(h), at(-h), at(-2.0 * h));
        probe.data_mut()[i] = x0;
        if ![p2, p1, m1, m2].iter().all(|v| v.is_finite()) {
            return Err(LabError::Evaluation(format!("non-finite function value at coordinate {i}")));
        }
        // Differences first, so a coordinate the function ignores gives exactly 0.
        grad.data_mut()[i] = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
    }
    Ok(grad)
}

/// Ridders' extrapolation of central differences, per coordinate.
///
/// Starts at step `h`, shrinks it by 1.4 up to ten times and Richardson-
/// extrapolates the tableau, keeping the entry with the smallest internal
/// error estimate. Useful where one fixed step is too coarse for some
/// coordinates and too fine for others.
pub fn numeric_gradient_ridders<F>(f: F, point: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> f64,
{
    Ok(ridders_with_error(f, point, h)?.0)
}

/// [`numeric_gradient_ridders`] together with the per-coordinate internal
/// error estimate.
pub fn ridders_with_error<F>(mut f: F, point: &Tensor, h: f64) -> Result<(Tensor, Tensor)>
where
    F: FnMut(&Tensor) -> f64,
{
    const CON: f64 = 1.4;
    const NTAB: usize = 10;
    const SAFE: f64 = 2.0;
    if !(h > 0.0) {
        return Err(LabError::Domain(format!("finite-difference step must be > 0, got {h}")));
    }
    let con2 = CON * CON;
    let mut probe = point.clone();
    let mut grad = Tensor::zeros(point.shape());
    let mut error = Tensor::zeros(point.shape());
    for i in 0..point.len() {
        let x0 = point.data()[i];
        let mut central = |step: f64| -> Result<f64> {
            probe.data_mut()[i] = x0 + step;
            let fp = f(&probe);
            probe.data_mut()[i] = x0 - step;
            let fm = f(&probe);
            probe.data_mut()[i] = x0;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(LabError::Evaluation(format!("non-finite function value at coordinate {i}")));
            }
            Ok((fp - fm) / (2.0 * step))
        };
        let mut a = [[0.0f64; NTAB]; NTAB];
        let mut step = h;
        a[0][0] = central(step)?;
        let mut best = a[0][0];
        let mut err = f64::INFINITY;
        for col in 1..NTAB {
            step /= CON;
            a[0][col] = central(step)?;
            let mut fac = con2;
            for row in 1..=col {
                a[row][col] = (a[row - 1][col] * fac - a[row - 1][col - 1]) / (fac - 1.0);
                fac *= con2;
                let e = (a[row][col] - a[row - 1][col]).abs().max((a[row][col] - a[row - 1][col - 1]).abs());
                if e <= err {
                    err = e;
                    best = a[row][col];
                }
            }
            if (a[col][col] - a[col - 1][col - 1]).abs() >= SAFE * err {
                break;
            }
        }
        grad.data_mut()[i] = best;
        error.data_mut()[i] = err;
    }
    Ok((grad, error))
}

/// `max_i |fd_i - analytic_i| / (|analytic_i| + 1e-12)`.
pub fn max_relative_error(numeric: &Tensor, analytic: &Tensor) -> Result<f64> {
    numeric.expect_same_shape("max_relative_error", analytic)?;
    Ok(numeric
        .data()
        .iter()
        .zip(analytic.data())
        .map(|(n, a)| (n - a).abs() / (a.abs() + REL_FLOOR))
        .fold(0.0, f64::max))
}

/// Compares `analytic_grad` against central differences of `f` at `point`
/// and returns the worst coordinate's relative error.
pub fn finite_diff_check<F>(f: F, point: &Tensor, analytic_grad: &Tensor, h: f64) -> Result<f64>
where
    F: FnMut(&Tensor) -> f64,
{
    point.expect_same_shape("finite_diff_check", analytic_grad)?;
    let numeric = numeric_gradient(f, point, h)?;
    max_relative_error(&numeric, analytic_grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let x = Tensor::from_vec(vec![3.0]);
        let g = Tensor::from_vec(vec![6.0]);
        let err = finite_diff_check(|t| t.data()[0].powi(2), &x, &g, 1e-6).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn fourth_order_is_exact_on_quartics() {
        let x = Tensor::from_vec(vec![0.7]);
        let g = numeric_gradient4(|t| t.data()[0].powi(4), &x, 1e-2).unwrap();
        assert!((g.data()[0] - 4.0 * 0.7f64.powi(3)).abs() < 1e-12);
    }

    #[test]
    fn ridders_beats_a_fixed_step_on_a_stiff_exponential() {
        let x = Tensor::from_vec(vec![1.0]);
        let exact = 40.0 * 40f64.exp();
        let g = numeric_gradient_ridders(|t| (40.0 * t.data()[0]).exp(), &x, 1e-2).unwrap();
        assert!(((g.data()[0] - exact) / exact).abs() < 1e-10);
    }

    #[test]
    fn constant_function() {
        let x = Tensor::from_vec(vec![1.0, -2.0, 0.5]);
        let g = Tensor::zeros(&[3]);
        assert_eq!(finite_diff_check(|_| 4.2, &x, &g, 1e-6).unwrap(), 0.0);
    }

    #[test]
    fn non_finite_value_is_an_error() {
        let x = Tensor::from_vec(vec![0.0]);
        let g = Tensor::zeros(&[1]);
        let r = finite_diff_check(|t| 1.0 / (t.data()[0] - 1e-6), &x, &g, 1e-6);
        assert!(matches!(r, Err(LabError::Evaluation(_))));
    }

    #[test]
    fn step_must_be_positive() {
        let x = Tensor::from_vec(vec![0.0]);
        assert!(numeric_gradient(|_| 0.0, &x, 0.0).is_err());
    }
}
