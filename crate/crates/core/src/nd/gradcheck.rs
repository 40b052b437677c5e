//! Central finite differences, used to check analytic gradients.

/// Step used for all gradient checks.
pub const STEP: f64 = 1e-5;

/// `(f(x + h) - f(x - h)) / 2h` for coordinate `i` of `x`.
pub fn central_difference<F>(mut f: F, x: &mut [f64], i: usize, h: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let orig = x[i];
    x[i] = orig + h;
    let up = f(x);
    x[i] = orig - h;
    let down = f(x);
    x[i] = orig;
    (up - down) / (2.0 * h)
}

/// Relative error with a floor on the denominator so that gradients that
/// are both essentially zero compare as equal.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}
