//! Finite-difference helpers shared by unit tests.

pub fn central_diff(x: f64, eps: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    (f(x + eps) - f(x - eps)) / (2.0 * eps)
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    crate::trainer::relative_error(analytic, numeric)
}
