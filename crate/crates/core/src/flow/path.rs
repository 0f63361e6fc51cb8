use crate::error::{LabError, Result};
use crate::numeric::Tensor;

/// `x_t = (1 − t)·x0 + t·eps`.
pub fn interpolate(x0: &[f64], eps: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(LabError::config(format!("interpolation time {t} outside [0, 1]")));
    }
    if x0.len() != eps.len() {
        return Err(LabError::config("interpolate: length mismatch"));
    }
    Ok(x0.iter().zip(eps).map(|(a, e)| (1.0 - t) * a + t * e).collect())
}

/// `eps − x0`.
pub fn velocity_target(x0: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    if x0.len() != eps.len() {
        return Err(LabError::config("velocity_target: length mismatch"));
    }
    Ok(x0.iter().zip(eps).map(|(a, e)| e - a).collect())
}

/// Row-wise [`interpolate`] with one time per row.
pub fn interpolate_batch(x0: &Tensor, eps: &Tensor, t: &[f64]) -> Result<Tensor> {
    if !x0.same_shape(eps) || t.len() != x0.rows() {
        return Err(LabError::config("interpolate_batch: shape mismatch"));
    }
    let mut out = Vec::with_capacity(x0.len());
    for (i, &ti) in t.iter().enumerate() {
        out.extend(interpolate(x0.row_slice(i), eps.row_slice(i), ti)?);
    }
    Tensor::matrix(x0.rows(), x0.cols(), out)
}

/// Row-wise [`velocity_target`].
pub fn velocity_target_batch(x0: &Tensor, eps: &Tensor) -> Result<Tensor> {
    if !x0.same_shape(eps) {
        return Err(LabError::config("velocity_target_batch: shape mismatch"));
    }
    eps.zip_map(x0, |e, a| e - a)
}
