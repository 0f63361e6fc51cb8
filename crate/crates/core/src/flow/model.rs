use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::numeric::{Activation, Init, Mlp, MlpSpec, ParamSet, Tape, Tensor, Var};
use crate::rng::rng_for;

/// Velocity-network architecture. `depth` counts linear layers, so the
/// default has three hidden layers of `width` units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub dim: usize,
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default)]
    pub wide_head: bool,
    #[serde(default)]
    pub activation: Activation,
}

fn default_width() -> usize {
    256
}
fn default_depth() -> usize {
    4
}

impl FlowConfig {
    pub fn new(dim: usize) -> Self {
        FlowConfig {
            dim,
            width: default_width(),
            depth: default_depth(),
            wide_head: false,
            activation: Activation::Silu,
        }
    }

    pub fn mlp_spec(&self) -> MlpSpec {
        MlpSpec {
            input: self.dim + 1,
            hidden: vec![self.width; self.depth.saturating_sub(1)],
            output: self.dim,
            activation: self.activation,
            head_skip: if self.wide_head { self.dim } else { 0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.width == 0 || self.depth == 0 {
            return Err(LabError::config(format!("flow dims must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Time-conditioned velocity MLP `v(x_t, t)`; `t` is appended as an extra
/// input column.
#[derive(Clone, Debug)]
pub struct FlowModel {
    config: FlowConfig,
    mlp: Mlp,
    params: ParamSet,
}

pub(crate) const FLOW_PREFIX: &str = "flow";

impl FlowModel {
    pub fn new(config: FlowConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let mlp = Mlp::build(
            config.mlp_spec(),
            FLOW_PREFIX,
            &mut params,
            Init::default(),
            &mut rng_for(seed, "flow-init"),
        )?;
        Ok(FlowModel { config, mlp, params })
    }

    /// Rebuild from saved parameters.
    pub fn from_params(config: FlowConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let mlp = Mlp::attach(config.mlp_spec(), FLOW_PREFIX, &params)?;
        Ok(FlowModel { config, mlp, params })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn with_time(x: &Tensor, t: &[f64]) -> Result<Tensor> {
        let (n, d) = (x.rows(), x.cols());
        if t.len() != n {
            return Err(LabError::config("one timestep per row required"));
        }
        let mut data = Vec::with_capacity(n * (d + 1));
        for (i, &ti) in t.iter().enumerate() {
            data.extend_from_slice(x.row_slice(i));
            data.push(ti);
        }
        Tensor::matrix(n, d + 1, data)
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.config.dim {
            return Err(LabError::config(format!(
                "flow model expects width {}, got {}",
                self.config.dim,
                x.cols()
            )));
        }
        Ok(())
    }

    /// Differentiable prediction for rows `x_t` at per-row times `t`.
    pub fn forward(&self, tape: &mut Tape, x_t: &Tensor, t: &[f64]) -> Result<Var> {
        self.check(x_t)?;
        let input = tape.constant(Self::with_time(x_t, t)?);
        let skip = self.config.wide_head.then(|| tape.constant(x_t.clone()));
        self.mlp.forward(tape, &self.params, input, skip)
    }

    /// Velocity at a shared time `t` for every row.
    pub fn velocity(&self, x_t: &Tensor, t: f64) -> Result<Tensor> {
        self.velocity_at(x_t, &vec![t; x_t.rows()])
    }

    pub fn velocity_at(&self, x_t: &Tensor, t: &[f64]) -> Result<Tensor> {
        self.check(x_t)?;
        let input = Self::with_time(x_t, t)?;
        let skip = self.config.wide_head.then_some(x_t);
        self.mlp.infer(&self.params, &input, skip)
    }
}
