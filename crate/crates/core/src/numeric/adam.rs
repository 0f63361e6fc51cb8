use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::numeric::{ParamSet, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

/// Bias-corrected adaptive-moment state for one [`ParamSet`].
#[derive(Clone, Debug)]
pub struct OptimizerState {
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    config: AdamConfig,
}

impl OptimizerState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Result<Self> {
        let c = &config;
        let ok = c.lr > 0.0 && c.beta1 > 0.0 && c.beta1 < 1.0 && c.beta2 > 0.0 && c.beta2 < 1.0 && c.eps > 0.0;
        if !ok {
            return Err(LabError::config(format!("invalid Adam hyperparameters {config:?}")));
        }
        let zeros = || params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Ok(OptimizerState {
            step: 0,
            m: zeros(),
            v: zeros(),
            config,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Update every parameter.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        self.step_where(params, |_| true)
    }

    /// Update the parameters whose name satisfies `select`; each of them must
    /// carry a gradient.
    pub fn step_where(&mut self, params: &mut ParamSet, select: impl Fn(&str) -> bool) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(LabError::config("optimizer state does not match parameter set"));
        }
        let ids: Vec<_> = params.ids().filter(|&id| select(params.name(id))).collect();
        if let Some(&id) = ids.iter().find(|&&id| params.grad(id).is_none()) {
            return Err(LabError::config(format!(
                "missing gradient for parameter `{}`",
                params.name(id)
            )));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = i32::try_from(self.step).unwrap_or(i32::MAX);
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for id in ids {
            let i = id.index();
            let g = params.grad(id).expect("checked").data().to_vec();
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            let p = params.value_mut(id).data_mut();
            for k in 0..g.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                p[k] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(w: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::scalar(w)).unwrap();
        p
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        for g in [0.37, -5.0, 1e-3] {
            let mut p = one_param(1.0);
            let id = p.id("w").unwrap();
            let mut opt = OptimizerState::new(&p, AdamConfig::with_lr(0.01)).unwrap();
            p.set_grad(id, Tensor::scalar(g));
            opt.step(&mut p).unwrap();
            let delta = p.value(id).data()[0] - 1.0;
            assert!((delta + 0.01 * g.signum()).abs() < 1e-6, "g={g} delta={delta}");
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = one_param(2.5);
        let id = p.id("w").unwrap();
        let mut opt = OptimizerState::new(&p, AdamConfig::with_lr(0.1)).unwrap();
        for _ in 0..5 {
            p.set_zero_grad(id);
            opt.step(&mut p).unwrap();
        }
        assert_eq!(p.value(id).data()[0], 2.5);
        assert_eq!(opt.step_count(), 5);
    }

    #[test]
    fn descends_scalar_quadratic() {
        let mut p = one_param(0.0);
        let id = p.id("w").unwrap();
        let mut opt = OptimizerState::new(&p, AdamConfig::with_lr(0.1)).unwrap();
        for _ in 0..100 {
            let w = p.value(id).data()[0];
            p.set_grad(id, Tensor::scalar(2.0 * (w - 3.0)));
            opt.step(&mut p).unwrap();
        }
        let w = p.value(id).data()[0];
        assert!((w - 3.0).abs() < 0.1);
        // Independent scalar simulation of the same recursion.
        assert!((w - 2.980_655_437_527_812).abs() < 1e-9, "{w}");
    }

    #[test]
    fn missing_gradient_is_config_error() {
        let mut p = one_param(0.0);
        let mut opt = OptimizerState::new(&p, AdamConfig::with_lr(0.1)).unwrap();
        assert!(matches!(opt.step(&mut p), Err(LabError::Config(_))));
        assert_eq!(opt.step_count(), 0);
    }
}
