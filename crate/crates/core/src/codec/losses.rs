use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::numeric::{Tape, Tensor, Var};

/// Posterior log-variance bounds.
pub const LOGVAR_MIN: f64 = -12.0;
pub const LOGVAR_MAX: f64 = 6.0;

/// Loss weights for one training stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    #[serde(default = "default_semantic")]
    pub semantic: f64,
    #[serde(default = "default_pixel")]
    pub pixel: f64,
    #[serde(default = "default_kl")]
    pub kl: f64,
}

fn default_semantic() -> f64 {
    1.0
}
fn default_pixel() -> f64 {
    0.1
}
fn default_kl() -> f64 {
    1e-4
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            semantic: default_semantic(),
            pixel: default_pixel(),
            kl: default_kl(),
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = |w: f64| w >= 0.0 && w.is_finite();
        if !(ok(self.semantic) && ok(self.pixel) && ok(self.kl)) {
            return Err(LabError::config(format!(
                "loss weights must be finite and ≥ 0: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Weights plus the stage they apply to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub weights: LossWeights,
    pub stage: u8,
}

impl LossBundle {
    pub fn new(weights: LossWeights, stage: u8) -> Result<Self> {
        weights.validate()?;
        if !(1..=2).contains(&stage) {
            return Err(LabError::config(format!("stage must be 1 or 2, got {stage}")));
        }
        Ok(LossBundle { weights, stage })
    }
}

/// `mse(a, b) + mean_rows(1 − cos(a, b))` on the tape.
pub(crate) fn semantic_term(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    let l2 = tape.mse(pred, target)?;
    let cos = tape.cosine_loss(pred, target)?;
    tape.add(l2, cos)
}

fn evaluate(f: impl FnOnce(&mut Tape) -> Result<Var>) -> Result<f64> {
    let mut tape = Tape::new();
    let v = f(&mut tape)?;
    Ok(tape.scalar(v))
}

/// `Σ_j 0.5·(μ² + e^{logvar} − 1 − logvar)`, averaged over rows.
pub fn kl_loss(mu: &Tensor, logvar: &Tensor) -> Result<f64> {
    evaluate(|t| {
        let (m, l) = (t.constant(mu.clone()), t.constant(logvar.clone()));
        t.kl_std_normal(m, l)
    })
}

/// Equal-weight ℓ2 plus cosine loss; rows with a zero target skip the cosine
/// part.
pub fn semantic_loss(reconstructed: &Tensor, target: &Tensor) -> Result<f64> {
    evaluate(|t| {
        let (a, b) = (t.constant(reconstructed.clone()), t.constant(target.clone()));
        semantic_term(t, a, b)
    })
}

pub fn pixel_loss(decoded: &Tensor, target: &Tensor) -> Result<f64> {
    evaluate(|t| {
        let (a, b) = (t.constant(decoded.clone()), t.constant(target.clone()));
        t.mse(a, b)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f64]) -> Tensor {
        Tensor::row(v).unwrap()
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_loss(&row(&[0.0, 0.0]), &row(&[0.0, 0.0])).unwrap(), 0.0);
        assert_eq!(kl_loss(&row(&[1.0]), &row(&[0.0])).unwrap(), 0.5);
    }

    #[test]
    fn semantic_examples() {
        let a = row(&[1.0, 0.0]);
        assert_eq!(semantic_loss(&a, &a).unwrap(), 0.0);
        assert!((semantic_loss(&a, &row(&[0.0, 1.0])).unwrap() - 2.0).abs() < 1e-15);
        let a = row(&[0.5, -1.5, 2.0]);
        let b = row(&[1.0, -3.0, 4.0]);
        let mean_sq = (0.25 + 2.25 + 4.0) / 3.0;
        assert!((semantic_loss(&a, &b).unwrap() - mean_sq).abs() < 1e-12);
    }

    #[test]
    fn zero_target_skips_cosine_term() {
        let a = Tensor::matrix(2, 2, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let b = Tensor::matrix(2, 2, vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        assert!((semantic_loss(&a, &b).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn pixel_examples() {
        let a = row(&[0.3, 0.7]);
        assert_eq!(pixel_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(pixel_loss(&row(&[1.0, 1.0]), &row(&[0.0, 0.0])).unwrap(), 1.0);
        let p = Tensor::matrix(2, 2, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(pixel_loss(&p, &Tensor::zeros(&[2, 2])).unwrap(), 0.5);
    }

    #[test]
    fn bundle_validation() {
        assert!(LossBundle::new(LossWeights::default(), 3).is_err());
        let neg = LossWeights {
            kl: -1.0,
            ..LossWeights::default()
        };
        assert!(LossBundle::new(neg, 1).is_err());
    }
}
