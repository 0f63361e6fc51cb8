use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::{CodecConfig, FinetuneConfig};
use crate::error::{LabError, Result};
use crate::flow::{FlowConfig, TimestepSampler, TrainConfig};
use crate::numeric::Activation;

/// Names accepted in the `recipe` field.
pub const RECIPES: [&str; 6] = [
    "toy-ps-2d-vs-8d",
    "verify-decomposition",
    "capacity-bottleneck",
    "ladder-rae-svae-pvae-psvae",
    "shortcut-hd",
    "shift-table",
];

/// Where a flow is trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Space {
    Intrinsic,
    Ambient { h: usize },
    Rae { d_h: usize },
    Svae { d_l: usize },
    Psvae { d_l: usize },
    Pvae { d_l: usize },
}

impl Space {
    pub fn label(&self) -> String {
        match self {
            Space::Intrinsic => "intrinsic".into(),
            Space::Ambient { h } => format!("ambient-{h}"),
            Space::Rae { d_h } => format!("rae-{d_h}"),
            Space::Svae { d_l } => format!("svae-{d_l}"),
            Space::Psvae { d_l } => format!("psvae-{d_l}"),
            Space::Pvae { d_l } => format!("pvae-{d_l}"),
        }
    }

    /// Width of the space the flow lives in.
    pub fn dim(&self) -> usize {
        match *self {
            Space::Intrinsic => 2,
            Space::Ambient { h } => h,
            Space::Rae { d_h } => d_h,
            Space::Svae { d_l } | Space::Psvae { d_l } | Space::Pvae { d_l } => d_l,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
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

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            width: default_width(),
            depth: default_depth(),
            wide_head: false,
            activation: Activation::Silu,
        }
    }
}

impl ModelSpec {
    pub fn flow_config(&self, dim: usize) -> FlowConfig {
        FlowConfig {
            dim,
            width: self.width,
            depth: self.depth,
            wide_head: self.wide_head,
            activation: self.activation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSpec {
    #[serde(default)]
    pub loc: f64,
    #[serde(default = "one")]
    pub scale: f64,
    /// Overrides the toy shift rule for every space in the recipe.
    #[serde(default)]
    pub shift: Option<f64>,
}

fn one() -> f64 {
    1.0
}

impl Default for SamplerSpec {
    fn default() -> Self {
        SamplerSpec {
            loc: 0.0,
            scale: one(),
            shift: None,
        }
    }
}

impl SamplerSpec {
    pub fn sampler(&self, default_shift: f64) -> TimestepSampler {
        TimestepSampler {
            loc: self.loc,
            scale: self.scale,
            shift: self.shift.unwrap_or(default_shift),
            ..TimestepSampler::default()
        }
    }
}

/// How generated samples are drawn and scored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_euler")]
    pub euler_steps: usize,
    /// Reference points drawn in each scatter plot.
    #[serde(default = "default_plot_reference")]
    pub plot_reference: usize,
}

fn default_samples() -> usize {
    10_000
}
fn default_euler() -> usize {
    50
}
fn default_plot_reference() -> usize {
    4000
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            samples: default_samples(),
            euler_steps: default_euler(),
            plot_reference: default_plot_reference(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecompositionSpec {
    #[serde(default = "default_atoms")]
    pub atoms: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
}

fn default_atoms() -> usize {
    64
}
fn default_trials() -> usize {
    1000
}

impl Default for DecompositionSpec {
    fn default() -> Self {
        DecompositionSpec {
            atoms: default_atoms(),
            trials: default_trials(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacitySpec {
    #[serde(default = "default_capacity_widths")]
    pub widths: Vec<usize>,
    #[serde(default = "both")]
    pub wide_head: Vec<bool>,
}

fn default_capacity_widths() -> Vec<usize> {
    vec![16]
}
fn both() -> Vec<bool> {
    vec![false, true]
}

impl Default for CapacitySpec {
    fn default() -> Self {
        CapacitySpec {
            widths: default_capacity_widths(),
            wide_head: both(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShortcutSpec {
    #[serde(default)]
    pub finetune: FinetuneConfig,
    /// Channel budget; `⌈d_h/24⌉` when absent.
    #[serde(default)]
    pub top_k: Option<usize>,
}

/// A declarative experiment: one recipe, run once per seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub recipe: String,
    pub space: Space,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub sampler: SamplerSpec,
    #[serde(default)]
    pub training: TrainConfig,
    pub seeds: Vec<u64>,
    /// Output directory; the CLI `--out` flag or `FLOWLAB_OUT` apply when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub eval: EvalSpec,
    #[serde(default)]
    pub codec: CodecConfig,
    #[serde(default)]
    pub decomposition: DecompositionSpec,
    #[serde(default)]
    pub capacity: CapacitySpec,
    #[serde(default)]
    pub shortcut: ShortcutSpec,
}

/// Re-tag a library config error with the spec field it came from.
fn at(field: &str) -> impl Fn(LabError) -> LabError + '_ {
    move |e| match e {
        LabError::Config(m) => LabError::spec(field, m),
        other => other,
    }
}

impl ExperimentSpec {
    /// Minimal spec for `recipe` in `space` with every default filled in.
    pub fn new(recipe: &str, space: Space, seeds: Vec<u64>) -> Self {
        ExperimentSpec {
            recipe: recipe.to_string(),
            space,
            model: ModelSpec::default(),
            sampler: SamplerSpec::default(),
            training: TrainConfig::default(),
            seeds,
            output: None,
            eval: EvalSpec::default(),
            codec: CodecConfig::default(),
            decomposition: DecompositionSpec::default(),
            capacity: CapacitySpec::default(),
            shortcut: ShortcutSpec::default(),
        }
    }

    /// Parse and validate. Errors name the offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let spec: ExperimentSpec = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            LabError::spec(if path == "." { "<root>".into() } else { path }, e.inner().to_string())
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::config(format!("cannot read spec {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !RECIPES.contains(&self.recipe.as_str()) {
            return Err(LabError::spec(
                "recipe",
                format!(
                    "unknown recipe `{}`; expected one of {}",
                    self.recipe,
                    RECIPES.join(", ")
                ),
            ));
        }
        if self.seeds.is_empty() {
            return Err(LabError::spec("seeds", "at least one seed is required"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(LabError::spec("seeds", "seeds must be distinct"));
        }
        let space_ok = match (self.recipe.as_str(), self.space) {
            ("toy-ps-2d-vs-8d" | "verify-decomposition", Space::Ambient { h }) => h > 2,
            ("capacity-bottleneck", Space::Intrinsic) => true,
            ("capacity-bottleneck", Space::Ambient { h }) => h >= 2,
            ("ladder-rae-svae-pvae-psvae", Space::Svae { d_l } | Space::Psvae { d_l } | Space::Pvae { d_l }) => {
                d_l >= 1
            }
            ("shortcut-hd", Space::Rae { d_h }) => d_h >= 1,
            ("shift-table", _) => true,
            _ => false,
        };
        if !space_ok {
            return Err(LabError::spec(
                "space",
                format!("space {} is not valid for recipe {}", self.space.label(), self.recipe),
            ));
        }
        self.model_config_check()?;
        self.sampler.sampler(1.0).validate().map_err(at("sampler"))?;
        self.training.validate().map_err(at("training"))?;
        if self.eval.samples == 0 || self.eval.euler_steps == 0 {
            return Err(LabError::spec("eval", "sample count and Euler steps must be positive"));
        }
        if self.decomposition.atoms == 0 || self.decomposition.trials == 0 {
            return Err(LabError::spec("decomposition", "atoms and trials must be positive"));
        }
        if self.capacity.widths.is_empty() || self.capacity.wide_head.is_empty() || self.capacity.widths.contains(&0) {
            return Err(LabError::spec(
                "capacity",
                "need at least one positive width and one head option",
            ));
        }
        match self.recipe.as_str() {
            "ladder-rae-svae-pvae-psvae" | "shortcut-hd" => self.effective_codec().validate().map_err(at("codec"))?,
            _ => {}
        }
        if let Some(k) = self.shortcut.top_k {
            let w = self.effective_codec().rep.width;
            if k == 0 || k > w {
                return Err(LabError::spec(
                    "shortcut.top_k",
                    format!("must satisfy 1 ≤ k ≤ {w}, got {k}"),
                ));
            }
        }
        Ok(())
    }

    fn model_config_check(&self) -> Result<()> {
        self.model
            .flow_config(self.space.dim().max(1))
            .validate()
            .map_err(at("model"))
    }

    /// Codec settings after applying the space descriptor's widths.
    pub fn effective_codec(&self) -> CodecConfig {
        let mut c = self.codec.clone();
        match self.space {
            Space::Svae { d_l } | Space::Psvae { d_l } | Space::Pvae { d_l } => c.latent = d_l,
            Space::Rae { d_h } => c.rep.width = d_h,
            _ => {}
        }
        c
    }

    /// Stable identifier of the experiment: SHA-256 of the canonical JSON
    /// (sorted keys, compact) with the output location removed.
    pub fn config_hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("spec serializes");
        if let Some(obj) = value.as_object_mut() {
            obj.remove("output");
        }
        let canonical = serde_json::to_string(&value).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}
