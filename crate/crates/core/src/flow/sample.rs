use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::flow::timestep::{default_t_min, shift_timestep, unshift_timestep};
use crate::flow::FlowModel;
use crate::numeric::Tensor;
use crate::rng::{normal_vec, rng_for};

/// Anything that can report a velocity for a batch of states at one time.
pub trait VelocityField {
    fn dim(&self) -> usize;
    fn velocity(&self, x_t: &Tensor, t: f64) -> Result<Tensor>;
}

impl VelocityField for FlowModel {
    fn dim(&self) -> usize {
        FlowModel::dim(self)
    }

    fn velocity(&self, x_t: &Tensor, t: f64) -> Result<Tensor> {
        FlowModel::velocity(self, x_t, t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EulerConfig {
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "one")]
    pub shift: f64,
    #[serde(default = "default_t_min")]
    pub t_min: f64,
}

fn default_steps() -> usize {
    50
}
fn one() -> f64 {
    1.0
}

impl Default for EulerConfig {
    fn default() -> Self {
        EulerConfig {
            steps: default_steps(),
            shift: 1.0,
            t_min: default_t_min(),
        }
    }
}

impl EulerConfig {
    pub fn new(steps: usize, shift: f64) -> Self {
        EulerConfig {
            steps,
            shift,
            ..EulerConfig::default()
        }
    }

    /// `steps + 1` times from 1 down to `t_min`: uniform in the unshifted
    /// variable, then mapped through the shift.
    pub fn grid(&self) -> Result<Vec<f64>> {
        if self.steps == 0 {
            return Err(LabError::config("Euler sampling needs at least one step"));
        }
        if self.shift.is_nan() || self.shift < 1.0 || !(self.t_min > 0.0 && self.t_min < 1.0) {
            return Err(LabError::config(format!("invalid Euler config {self:?}")));
        }
        let u_min = unshift_timestep(self.t_min, self.shift);
        let n = self.steps as f64;
        let mut grid: Vec<f64> = (0..=self.steps)
            .map(|i| shift_timestep(1.0 - (1.0 - u_min) * i as f64 / n, self.shift))
            .collect();
        grid[0] = 1.0;
        grid[self.steps] = self.t_min;
        Ok(grid)
    }
}

/// Integrate `dx/dt = v(x, t)` from `t = 1` to `t_min` with explicit Euler,
/// then extrapolate linearly to `t = 0` with the last velocity.
pub fn euler_integrate(field: &dyn VelocityField, x1: Tensor, cfg: &EulerConfig) -> Result<Tensor> {
    if x1.cols() != field.dim() {
        return Err(LabError::config(format!(
            "initial state width {} does not match field width {}",
            x1.cols(),
            field.dim()
        )));
    }
    let grid = cfg.grid()?;
    let mut x = x1;
    let mut v = None;
    for (i, w) in grid.windows(2).enumerate() {
        let vel = field.velocity(&x, w[0])?;
        axpy(&mut x, w[1] - w[0], &vel);
        if !x.all_finite() {
            return Err(LabError::NonFinite(format!(
                "Euler state after step {} at t={}",
                i + 1,
                w[1]
            )));
        }
        v = Some(vel);
    }
    let t_last = *grid.last().expect("non-empty grid");
    axpy(&mut x, -t_last, v.as_ref().expect("at least one step"));
    if !x.all_finite() {
        return Err(LabError::NonFinite("Euler state after final extrapolation".into()));
    }
    Ok(x)
}

fn axpy(x: &mut Tensor, a: f64, v: &Tensor) {
    x.data_mut().iter_mut().zip(v.data()).for_each(|(xi, vi)| *xi += a * vi);
}

/// Draw `n` standard-normal starting points from `seed` and integrate them.
pub fn euler_sample(field: &dyn VelocityField, n: usize, cfg: &EulerConfig, seed: u64) -> Result<Tensor> {
    if n == 0 {
        return Err(LabError::config("sample count must be ≥ 1"));
    }
    let d = field.dim();
    let noise = Tensor::matrix(n, d, normal_vec(&mut rng_for(seed, "euler-noise"), n * d))?;
    euler_integrate(field, noise, cfg)
}
