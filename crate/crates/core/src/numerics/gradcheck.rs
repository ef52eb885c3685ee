//! Central finite-difference gradient checking.

use serde::Serialize;

use super::matrix::FeatureMatrix;

/// Gradients smaller than this are compared absolutely rather than relatively.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Flat row-major index of the worst coordinate.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// `|a - n| / max(|a|, |n|, RELATIVE_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Central differences `(f(x + eps e_k) - f(x - eps e_k)) / 2 eps` at every coordinate.
pub fn numeric_gradient<F>(f: F, point: &FeatureMatrix, eps: f64) -> FeatureMatrix
where
    F: Fn(&FeatureMatrix) -> f64,
{
    let mut probe = point.clone();
    let mut out = FeatureMatrix::zeros(point.rows(), point.dim());
    for k in 0..point.as_slice().len() {
        let orig = probe.as_slice()[k];
        probe.as_mut_slice()[k] = orig + eps;
        let up = f(&probe);
        probe.as_mut_slice()[k] = orig - eps;
        let down = f(&probe);
        probe.as_mut_slice()[k] = orig;
        out.as_mut_slice()[k] = (up - down) / (2.0 * eps);
    }
    out
}

/// Compares an analytic gradient at `point` against central differences of `f`.
pub fn grad_check<F>(f: F, analytic: &FeatureMatrix, point: &FeatureMatrix, eps: f64) -> GradCheckReport
where
    F: Fn(&FeatureMatrix) -> f64,
{
    assert!(eps > 0.0, "finite-difference step must be positive");
    assert_eq!(analytic.as_slice().len(), point.as_slice().len(), "gradient shape");
    let numeric = numeric_gradient(f, point, eps);
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for (k, (&a, &n)) in analytic.as_slice().iter().zip(numeric.as_slice()).enumerate() {
        let e = relative_error(a, n);
        if e > report.max_relative_error || k == 0 {
            report = GradCheckReport {
                max_relative_error: e,
                worst_index: k,
                analytic: a,
                numeric: n,
            };
        }
    }
    report
}
