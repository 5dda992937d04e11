use super::FlowError;

/// `(1 - t) x0 + t x1`, with both endpoints reproduced exactly.
pub fn interpolate(x0: &[f64], x1: &[f64], t: f64) -> Result<Vec<f64>, FlowError> {
    if x0.len() != x1.len() {
        return Err(FlowError::ShapeMismatch { expected: x0.len(), got: x1.len() });
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(FlowError::TimeOutOfRange(t));
    }
    if t == 0.0 {
        return Ok(x0.to_vec());
    }
    if t == 1.0 {
        return Ok(x1.to_vec());
    }
    Ok(x0.iter().zip(x1).map(|(&a, &b)| (1.0 - t) * a + t * b).collect())
}

/// Resolution shift `s u / (1 + (s - 1) u)`; pushes the schedule toward the
/// noise end for `s > 1`.
pub fn shift_timestep(u: f64, shift: f64) -> f64 {
    shift * u / (1.0 + (shift - 1.0) * u)
}
