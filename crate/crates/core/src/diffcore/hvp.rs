use super::DiffError;

/// Finite-difference cross second derivative.
///
/// `grad_at(p)` returns a gradient block of the loss at the flattened point
/// `p`. The result approximates `d/dh grad_at(point + h * direction)` at
/// `h = 0`, i.e. the mixed Hessian block applied to `direction`:
///
/// `(grad_at(p + h v) - grad_at(p)) / h` with `h = 1e-3 * (1 + |p|_inf)`.
///
/// The direction is rescaled to unit max-norm before stepping and the
/// result scaled back, so the step length never depends on `|v|`.
/// `base` may carry an already computed `grad_at(point)`.
pub fn hvp_cross<F>(
    mut grad_at: F,
    point: &[f64],
    direction: &[f64],
    base: Option<&[f64]>,
) -> Result<Vec<f64>, DiffError>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>, DiffError>,
{
    if point.len() != direction.len() {
        return Err(DiffError::Shape(format!(
            "point has {} coordinates, direction {}",
            point.len(),
            direction.len()
        )));
    }
    let scale = direction.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if !scale.is_finite() {
        return Err(DiffError::NonFinite("hvp direction".into()));
    }
    let owned_base;
    let base = match base {
        Some(b) => b,
        None => {
            owned_base = grad_at(point)?;
            &owned_base
        }
    };
    if scale == 0.0 {
        return Ok(vec![0.0; base.len()]);
    }
    let p_inf = point.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let h = 1e-3 * (1.0 + p_inf);
    let shifted: Vec<f64> = point
        .iter()
        .zip(direction)
        .map(|(p, v)| p + h * v / scale)
        .collect();
    let moved = grad_at(&shifted)?;
    if moved.len() != base.len() {
        return Err(DiffError::Shape("gradient length changed between evaluations".into()));
    }
    let out: Vec<f64> = moved
        .iter()
        .zip(base)
        .map(|(a, b)| (a - b) / h * scale)
        .collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(DiffError::NonFinite("hvp_cross result".into()));
    }
    Ok(out)
}
