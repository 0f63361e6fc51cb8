use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::manifold::{GlyphDistribution, OrthonormalEmbedding};
use crate::numeric::{Activation, Init, Mlp, MlpSpec, ParamSet, Tensor};
use crate::rng::{derive_seed, rng_for};

/// Parameter-name prefix shared by the frozen map and any working copy.
pub const REP_PREFIX: &str = "rep";

/// Upper bound on the representation width.
pub const MAX_REP_WIDTH: usize = 768;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepConfig {
    /// Feature width `d_h`.
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_depth")]
    pub hidden_layers: usize,
    #[serde(default)]
    pub lossy: bool,
    /// Directions removed in lossy mode; `width / 8` when absent.
    #[serde(default)]
    pub lost_rank: Option<usize>,
    #[serde(default = "default_calibration")]
    pub calibration: usize,
}

fn default_width() -> usize {
    64
}
fn default_hidden() -> usize {
    128
}
fn default_depth() -> usize {
    3
}
fn default_calibration() -> usize {
    4096
}

impl Default for RepConfig {
    fn default() -> Self {
        RepConfig {
            width: default_width(),
            hidden: default_hidden(),
            hidden_layers: default_depth(),
            lossy: false,
            lost_rank: None,
            calibration: default_calibration(),
        }
    }
}

impl RepConfig {
    pub fn lossy(width: usize) -> Self {
        RepConfig {
            width,
            lossy: true,
            ..RepConfig::default()
        }
    }

    /// Effective number of discarded directions (0 when not lossy).
    pub fn effective_lost_rank(&self) -> usize {
        if self.lossy {
            self.lost_rank.unwrap_or(self.width / 8)
        } else {
            0
        }
    }

    pub fn mlp_spec(&self) -> MlpSpec {
        MlpSpec {
            input: 2,
            hidden: vec![self.hidden; self.hidden_layers],
            output: self.width,
            activation: Activation::Silu,
            head_skip: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.width > MAX_REP_WIDTH {
            return Err(LabError::config(format!(
                "representation width must be in 1..={MAX_REP_WIDTH}, got {}",
                self.width
            )));
        }
        if self.hidden == 0 || self.calibration == 0 {
            return Err(LabError::config(
                "representation hidden width and calibration size must be positive",
            ));
        }
        let k = self.effective_lost_rank();
        if self.lossy && (k == 0 || k >= self.width) {
            return Err(LabError::config(format!(
                "lost rank must satisfy 1 ≤ k < d_h, got k={k}, d_h={}",
                self.width
            )));
        }
        Ok(())
    }
}

/// Seeded, frozen stand-in for a pretrained encoder `R² → R^{d_h}`.
///
/// Parameters are only reachable through `&self`, so the frozen copy cannot
/// change after construction. Training code clones them into its own set.
#[derive(Clone, Debug)]
pub struct RepresentationMap {
    config: RepConfig,
    seed: u64,
    mlp: Mlp,
    params: ParamSet,
    lost: Option<OrthonormalEmbedding>,
}

impl RepresentationMap {
    pub fn new(config: RepConfig, glyph: &GlyphDistribution, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let mlp = Mlp::build(
            config.mlp_spec(),
            REP_PREFIX,
            &mut params,
            Init::default(),
            &mut rng_for(seed, "rep-init"),
        )?;
        let (wid, bid) = *mlp.layers().last().expect("output layer");

        let lost = if config.lossy {
            let k = config.effective_lost_rank();
            let u = OrthonormalEmbedding::random(config.width, k, derive_seed(seed, "rep-lost"))?;
            let uu = u.matrix().matmul(&u.matrix().transpose())?;
            let proj = Tensor::identity(config.width).zip_map(&uu, |a, b| a - b)?;
            let w = params.value(wid).matmul(&proj)?;
            let b = params.value(bid).matmul(&proj)?;
            *params.value_mut(wid) = w;
            *params.value_mut(bid) = b;
            Some(u)
        } else {
            None
        };

        let calib = glyph.sample(config.calibration, derive_seed(seed, "rep-calibration"))?;
        let feats = mlp.infer(&params, &calib.points, None)?;
        let rms = (feats.data().iter().map(|v| v * v).sum::<f64>() / feats.len() as f64).sqrt();
        if !(rms.is_finite() && rms > 0.0) {
            return Err(LabError::NonFinite(format!("representation calibration RMS is {rms}")));
        }
        for id in [wid, bid] {
            params.value_mut(id).data_mut().iter_mut().for_each(|v| *v /= rms);
        }

        Ok(RepresentationMap {
            config,
            seed,
            mlp,
            params,
            lost,
        })
    }

    pub fn config(&self) -> &RepConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn width(&self) -> usize {
        self.config.width
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Orthonormal basis of the discarded output directions (lossy mode).
    pub fn lost_directions(&self) -> Option<&OrthonormalEmbedding> {
        self.lost.as_ref()
    }

    /// Same architecture with replacement weights, e.g. a fine-tuned working
    /// copy. Only `rep.*` entries of `params` are used.
    pub fn with_params(&self, params: &ParamSet) -> Result<RepresentationMap> {
        let mut own = self.params.clone();
        own.load_values_from(&params.subset(REP_PREFIX)?)?;
        Ok(RepresentationMap {
            params: own,
            ..self.clone()
        })
    }

    /// `rep_encode`: features for each row of `pixels` (`n × 2`).
    pub fn encode(&self, pixels: &Tensor) -> Result<Tensor> {
        self.mlp.infer(&self.params, pixels, None)
    }
}
