//! Central finite-difference gradient checking.

/// Magnitude below which gradient entries are compared absolutely; central
/// differences at `h = 1e-6` carry roughly `1e-10 * |f|` of rounding noise.
pub const MAGNITUDE_FLOOR: f64 = 1e-3;

/// `|a - n| / max(|a|, |n|, MAGNITUDE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Central difference `(f(x + h e_k) - f(x - h e_k)) / 2h` for one coordinate.
pub fn central_difference<F>(mut f: F, x: &[f64], k: usize, h: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let mut xp = x.to_vec();
    xp[k] += h;
    let fp = f(&xp);
    xp[k] = x[k] - h;
    let fm = f(&xp);
    (fp - fm) / (2.0 * h)
}

/// Worst relative error over the given coordinates.
pub fn max_relative_error<F>(mut f: F, x: &[f64], grad: &[f64], coords: &[usize], h: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    coords
        .iter()
        .map(|&k| relative_error(grad[k], central_difference(&mut f, x, k, h)))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic() {
        let f = |x: &[f64]| x[0].powi(3) + 2.0 * x[1];
        let x = [1.5, -0.5];
        let g = [3.0 * 1.5 * 1.5, 2.0];
        assert!(max_relative_error(f, &x, &g, &[0, 1], 1e-6) < 1e-8);
    }
}
