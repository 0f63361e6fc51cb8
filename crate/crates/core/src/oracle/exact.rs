use crate::error::{LabError, Result};
use crate::flow::VelocityField;
use crate::manifold::OrthonormalEmbedding;
use crate::numeric::Tensor;

/// Empirical distribution over a finite set of atoms with its closed-form
/// flow-matching velocity `E[eps − x0 | x_t]`.
#[derive(Clone, Debug)]
pub struct DatasetOracle {
    points: Tensor,
    t_min: f64,
}

impl DatasetOracle {
    pub fn new(points: Tensor) -> Result<Self> {
        Self::with_t_min(points, 1e-3)
    }

    pub fn with_t_min(points: Tensor, t_min: f64) -> Result<Self> {
        if points.shape().len() != 2 {
            return Err(LabError::config("oracle atoms must be an n × d matrix"));
        }
        if !points.all_finite() {
            return Err(LabError::config("oracle atoms must be finite"));
        }
        if !(t_min > 0.0 && t_min < 1.0) {
            return Err(LabError::config(format!(
                "oracle t_min must lie in (0, 1), got {t_min}"
            )));
        }
        Ok(DatasetOracle { points, t_min })
    }

    pub fn points(&self) -> &Tensor {
        &self.points
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    pub fn t_min(&self) -> f64 {
        self.t_min
    }

    fn check(&self, x_t: &[f64], t: f64) -> Result<()> {
        if x_t.len() != self.dim() {
            return Err(LabError::config(format!(
                "oracle expects width {}, got {}",
                self.dim(),
                x_t.len()
            )));
        }
        if !(t >= self.t_min && t <= 1.0) {
            return Err(LabError::Precondition(format!(
                "oracle time {t} outside [{}, 1]",
                self.t_min
            )));
        }
        Ok(())
    }

    /// Posterior weights `w_i ∝ exp(−‖x_t − (1−t)p_i‖² / (2t²))`, normalized
    /// after subtracting the maximum log-weight.
    pub fn posterior_weights(&self, x_t: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check(x_t, t)?;
        let denom = 2.0 * t * t;
        let logw: Vec<f64> = (0..self.points.rows())
            .map(|i| {
                let d2: f64 = x_t
                    .iter()
                    .zip(self.points.row_slice(i))
                    .map(|(x, p)| (x - (1.0 - t) * p).powi(2))
                    .sum();
                -d2 / denom
            })
            .collect();
        let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        Ok(w)
    }

    /// `Σ w_i (x_t − p_i) / t`.
    pub fn exact_velocity(&self, x_t: &[f64], t: f64) -> Result<Vec<f64>> {
        let w = self.posterior_weights(x_t, t)?;
        let mut mean = vec![0.0; self.dim()];
        for (i, wi) in w.iter().enumerate() {
            for (m, p) in mean.iter_mut().zip(self.points.row_slice(i)) {
                *m += wi * p;
            }
        }
        Ok(x_t.iter().zip(&mean).map(|(x, m)| (x - m) / t).collect())
    }
}

impl VelocityField for DatasetOracle {
    fn dim(&self) -> usize {
        DatasetOracle::dim(self)
    }

    fn velocity(&self, x_t: &Tensor, t: f64) -> Result<Tensor> {
        let mut out = Vec::with_capacity(x_t.len());
        for i in 0..x_t.rows() {
            out.extend(self.exact_velocity(x_t.row_slice(i), t)?);
        }
        Tensor::matrix(x_t.rows(), self.dim(), out)
    }
}

/// `Q · v_z(Qᵀx_t) + (x_t − QQᵀx_t) / t`, the ambient optimal velocity
/// written through the intrinsic one.
pub fn decomposition_rhs(q: &OrthonormalEmbedding, intrinsic: &DatasetOracle, x_t: &[f64], t: f64) -> Result<Vec<f64>> {
    if intrinsic.dim() != q.intrinsic_dim() || x_t.len() != q.ambient_dim() {
        return Err(LabError::config(format!(
            "decomposition dims disagree: Q is {}×{}, atoms width {}, x_t width {}",
            q.ambient_dim(),
            q.intrinsic_dim(),
            intrinsic.dim(),
            x_t.len()
        )));
    }
    let x = Tensor::row(x_t)?;
    let z = q.project(&x)?;
    let vz = intrinsic.exact_velocity(z.data(), t)?;
    let on = q.embed(&Tensor::row(&vz)?)?;
    let resid = q.orthogonal_residual(&x)?;
    Ok(on.data().iter().zip(resid.data()).map(|(a, r)| a + r / t).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::make_embedding;

    #[test]
    fn single_atom_is_straight_line_field() {
        let o = DatasetOracle::new(Tensor::row(&[1.0, -2.0]).unwrap()).unwrap();
        let v = o.exact_velocity(&[0.5, 0.5], 0.25).unwrap();
        assert_eq!(v, vec![(0.5 - 1.0) / 0.25, (0.5 + 2.0) / 0.25]);
    }

    #[test]
    fn symmetric_pair_cancels_at_origin() {
        let o = DatasetOracle::new(Tensor::matrix(2, 2, vec![-1.0, 0.5, 1.0, -0.5]).unwrap()).unwrap();
        assert_eq!(o.exact_velocity(&[0.0, 0.0], 0.4).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn small_t_is_precondition_error() {
        let o = DatasetOracle::new(Tensor::row(&[0.0]).unwrap()).unwrap();
        assert!(matches!(o.exact_velocity(&[0.0], 1e-4), Err(LabError::Precondition(_))));
        assert!(o.exact_velocity(&[0.0], 1e-3).is_ok());
    }

    #[test]
    fn weights_survive_tiny_t() {
        let o = DatasetOracle::new(Tensor::matrix(2, 1, vec![0.0, 5.0]).unwrap()).unwrap();
        let w = o.posterior_weights(&[4.0], 1e-3).unwrap();
        assert!(w.iter().all(|v| v.is_finite()));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn on_manifold_state_has_no_residual_term() {
        let q = make_embedding(5, 2, 3).unwrap();
        let o = DatasetOracle::new(Tensor::matrix(2, 2, vec![0.3, -0.1, -0.7, 0.9]).unwrap()).unwrap();
        let z = [0.2, 0.4];
        let x = q.embed(&Tensor::row(&z).unwrap()).unwrap();
        let rhs = decomposition_rhs(&q, &o, x.data(), 0.5).unwrap();
        let want = q
            .embed(&Tensor::row(&o.exact_velocity(&z, 0.5).unwrap()).unwrap())
            .unwrap();
        for (a, b) in rhs.iter().zip(want.data()) {
            assert!((a - b).abs() <= 1e-14);
        }
    }

    #[test]
    fn orthogonal_state_with_origin_atom_gives_x_over_t() {
        let q = OrthonormalEmbedding::from_matrix(Tensor::matrix(3, 1, vec![1.0, 0.0, 0.0]).unwrap()).unwrap();
        let o = DatasetOracle::new(Tensor::row(&[0.0]).unwrap()).unwrap();
        let rhs = decomposition_rhs(&q, &o, &[0.0, 2.0, -1.0], 0.5).unwrap();
        assert_eq!(rhs, vec![0.0, 4.0, -2.0]);
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let q = make_embedding(4, 2, 0).unwrap();
        let o = DatasetOracle::new(Tensor::row(&[0.0, 0.0, 0.0]).unwrap()).unwrap();
        assert!(matches!(
            decomposition_rhs(&q, &o, &[0.0; 4], 0.5),
            Err(LabError::Config(_))
        ));
    }
}
