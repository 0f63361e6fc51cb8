use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::numeric::tape::{concat_cols, linear_forward, silu};
use crate::numeric::{ParamId, ParamSet, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Silu,
    Relu,
}

impl Activation {
    fn apply(self, tape: &mut Tape, v: Var) -> Var {
        match self {
            Activation::Silu => tape.silu(v),
            Activation::Relu => tape.relu(v),
        }
    }

    fn apply_tensor(self, t: &Tensor) -> Tensor {
        match self {
            Activation::Silu => t.map(silu),
            Activation::Relu => t.map(|x| x.max(0.0)),
        }
    }
}

/// Architecture descriptor: `input → hidden[0] → … → output`.
///
/// `head_skip` extra columns (supplied at call time) are concatenated to the
/// last hidden activation before the output projection.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub head_skip: usize,
}

impl MlpSpec {
    pub fn new(input: usize, hidden: Vec<usize>, output: usize) -> Self {
        MlpSpec {
            input,
            hidden,
            output,
            activation: Activation::Silu,
            head_skip: 0,
        }
    }

    /// `(fan_in, fan_out)` of each linear layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input;
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev + self.head_skip, self.output));
        dims
    }

    fn validate(&self) -> Result<()> {
        if self.input == 0 || self.output == 0 || self.hidden.contains(&0) {
            return Err(LabError::config(format!("MLP widths must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Seeded uniform fan-in initialization: `W ~ U(±gain/√fan_in)`, `b = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Init {
    pub gain: f64,
}

impl Default for Init {
    fn default() -> Self {
        Init { gain: 1.0 }
    }
}

/// An MLP whose weights live in a [`ParamSet`] under `prefix`.
#[derive(Clone, Debug)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    /// Create fresh parameters `{prefix}.l{i}.w` / `{prefix}.l{i}.b`.
    pub fn build(spec: MlpSpec, prefix: &str, params: &mut ParamSet, init: Init, rng: &mut impl Rng) -> Result<Mlp> {
        spec.validate()?;
        let mut layers = Vec::new();
        for (i, (fan_in, fan_out)) in spec.layer_dims().into_iter().enumerate() {
            let bound = init.gain / (fan_in as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            let wid = params.insert(format!("{prefix}.l{i}.w"), Tensor::matrix(fan_in, fan_out, w)?)?;
            let bid = params.insert(format!("{prefix}.l{i}.b"), Tensor::zeros(&[1, fan_out]))?;
            layers.push((wid, bid));
        }
        Ok(Mlp { spec, layers })
    }

    /// Bind to parameters that already exist in `params`.
    pub fn attach(spec: MlpSpec, prefix: &str, params: &ParamSet) -> Result<Mlp> {
        spec.validate()?;
        let mut layers = Vec::new();
        for (i, (fan_in, fan_out)) in spec.layer_dims().into_iter().enumerate() {
            let find = |suffix: &str, shape: [usize; 2]| {
                let name = format!("{prefix}.l{i}.{suffix}");
                let id = params
                    .id(&name)
                    .ok_or_else(|| LabError::config(format!("missing parameter `{name}`")))?;
                if params.value(id).shape() != shape {
                    return Err(LabError::config(format!("parameter `{name}` has wrong shape")));
                }
                Ok(id)
            };
            layers.push((find("w", [fan_in, fan_out])?, find("b", [1, fan_out])?));
        }
        Ok(Mlp { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[(ParamId, ParamId)] {
        &self.layers
    }

    fn check_input(&self, x: &Tensor, skip: Option<&Tensor>) -> Result<()> {
        if x.cols() != self.spec.input {
            return Err(LabError::config(format!(
                "MLP expects input width {}, got {}",
                self.spec.input,
                x.cols()
            )));
        }
        match (self.spec.head_skip, skip) {
            (0, None) => Ok(()),
            (w, Some(s)) if w > 0 && s.cols() == w && s.rows() == x.rows() => Ok(()),
            (w, _) => Err(LabError::config(format!(
                "MLP head skip expects width {w}, got {:?}",
                skip.map(Tensor::shape)
            ))),
        }
    }

    /// Differentiable forward pass recorded on `tape`.
    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, x: Var, skip: Option<Var>) -> Result<Var> {
        let skip_val = skip.map(|s| tape.value(s).clone());
        self.check_input(tape.value(x), skip_val.as_ref())?;
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            if i == last {
                if let Some(s) = skip {
                    h = tape.concat_cols(h, s)?;
                }
            }
            let (wv, bv) = (tape.param(params, w), tape.param(params, b));
            h = tape.linear(h, wv, bv)?;
            if i < last {
                h = self.spec.activation.apply(tape, h);
            }
        }
        Ok(h)
    }

    /// Same forward pass with parameters held constant (no gradient).
    pub fn forward_frozen(&self, tape: &mut Tape, params: &ParamSet, x: Var, skip: Option<Var>) -> Result<Var> {
        let skip_val = skip.map(|s| tape.value(s).clone());
        let out = self.infer(params, tape.value(x), skip_val.as_ref())?;
        Ok(tape.constant(out))
    }

    /// Tape-free forward pass; bit-identical to [`Mlp::forward`].
    pub fn infer(&self, params: &ParamSet, x: &Tensor, skip: Option<&Tensor>) -> Result<Tensor> {
        self.check_input(x, skip)?;
        let last = self.layers.len() - 1;
        let mut h: Option<Tensor> = None;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let mut input = h.take().unwrap_or_else(|| x.clone());
            if i == last {
                if let Some(s) = skip {
                    input = concat_cols(&input, s)?;
                }
            }
            let mut out = linear_forward(&input, params.value(w), params.value(b))?;
            if i < last {
                out = self.spec.activation.apply_tensor(&out);
            }
            h = Some(out);
        }
        Ok(h.expect("at least one layer"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    #[test]
    fn zero_weight_layer_outputs_zero() {
        let mut params = ParamSet::new();
        let spec = MlpSpec::new(3, vec![], 2);
        let mlp = Mlp::build(spec, "m", &mut params, Init { gain: 0.0 }, &mut rng_for(0, "t")).unwrap();
        let y = mlp
            .infer(&params, &Tensor::matrix(1, 3, vec![1.0, -2.0, 5.0]).unwrap(), None)
            .unwrap();
        assert_eq!(y.data(), &[0.0, 0.0]);
    }

    #[test]
    fn single_layer_is_affine() {
        let mut params = ParamSet::new();
        let mlp = Mlp::build(
            MlpSpec::new(2, vec![], 1),
            "m",
            &mut params,
            Init::default(),
            &mut rng_for(1, "t"),
        )
        .unwrap();
        let w = params.get("m.l0.w").unwrap().clone();
        let bid = params.id("m.l0.b").unwrap();
        params.value_mut(bid).data_mut()[0] = 0.25;
        let x = Tensor::matrix(1, 2, vec![1.5, -0.5]).unwrap();
        let y = mlp.infer(&params, &x, None).unwrap();
        let want = 1.5 * w.data()[0] - 0.5 * w.data()[1] + 0.25;
        assert!((y.data()[0] - want).abs() < 1e-15);
    }

    #[test]
    fn two_layer_matches_manual_composition() {
        let mut params = ParamSet::new();
        let spec = MlpSpec::new(3, vec![4], 2);
        let mlp = Mlp::build(spec, "m", &mut params, Init::default(), &mut rng_for(2, "t")).unwrap();
        let x = Tensor::matrix(2, 3, vec![0.1, 0.2, -0.3, 1.0, -1.0, 0.5]).unwrap();
        let (w0, b0) = (params.get("m.l0.w").unwrap(), params.get("m.l0.b").unwrap());
        let (w1, b1) = (params.get("m.l1.w").unwrap(), params.get("m.l1.b").unwrap());
        let y = mlp.infer(&params, &x, None).unwrap();
        for r in 0..2 {
            let mut h = [0.0; 4];
            for (j, hj) in h.iter_mut().enumerate() {
                let z: f64 = (0..3).map(|k| x.get(r, k) * w0.get(k, j)).sum::<f64>() + b0.data()[j];
                *hj = z / (1.0 + (-z).exp());
            }
            for o in 0..2 {
                let want: f64 = (0..4).map(|j| h[j] * w1.get(j, o)).sum::<f64>() + b1.data()[o];
                assert!((y.get(r, o) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tape_and_inference_paths_agree_bitwise() {
        let mut params = ParamSet::new();
        let mut spec = MlpSpec::new(3, vec![8, 8], 2);
        spec.head_skip = 2;
        let mlp = Mlp::build(spec, "m", &mut params, Init::default(), &mut rng_for(3, "t")).unwrap();
        let x = Tensor::matrix(2, 3, vec![0.3, -0.2, 0.9, 0.0, 1.0, -1.0]).unwrap();
        let s = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut tape = Tape::new();
        let (xv, sv) = (tape.constant(x.clone()), tape.constant(s.clone()));
        let out = mlp.forward(&mut tape, &params, xv, Some(sv)).unwrap();
        assert_eq!(tape.value(out), &mlp.infer(&params, &x, Some(&s)).unwrap());
    }

    #[test]
    fn width_mismatch_is_config_error() {
        let mut params = ParamSet::new();
        let mlp = Mlp::build(
            MlpSpec::new(3, vec![4], 2),
            "m",
            &mut params,
            Init::default(),
            &mut rng_for(4, "t"),
        )
        .unwrap();
        assert!(matches!(
            mlp.infer(&params, &Tensor::zeros(&[1, 2]), None),
            Err(LabError::Config(_))
        ));
    }
}
