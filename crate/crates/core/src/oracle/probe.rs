use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::flow::{toy_shift, train_flow, FlowConfig, FlowModel, PointSet, TimestepSampler, TrainConfig};
use crate::manifold::{make_embedding, GlyphDistribution, OrthonormalEmbedding};
use crate::numeric::Tensor;
use crate::oracle::{decomposition_rhs, DatasetOracle};
use crate::par::map_jobs;
use crate::rng::{derive_seed, normal_vec, rng_for};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionConfig {
    pub h: usize,
    pub l: usize,
    pub atoms: usize,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub config: DecompositionConfig,
    pub max_rel_err: f64,
    pub mean_err: f64,
}

/// Relative difference `‖a − b‖ / ‖a‖` (absolute when `a = 0`).
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// Compare the ambient oracle over `{Q z_i}` with [`decomposition_rhs`] at
/// `trials` random states `x_t = (1−t)·Q z_i + t·eps`, `t ~ U[0.05, 0.95]`.
pub fn verify_decomposition(
    q: &OrthonormalEmbedding,
    atoms: &Tensor,
    trials: usize,
    seed: u64,
) -> Result<DecompositionReport> {
    if trials == 0 {
        return Err(LabError::config("verification needs at least one trial"));
    }
    let intrinsic = DatasetOracle::new(atoms.clone())?;
    let ambient_atoms = q.embed(atoms)?;
    let ambient = DatasetOracle::new(ambient_atoms.clone())?;
    let h = q.ambient_dim();
    let mut rng = rng_for(seed, "decomposition");
    let (mut max, mut sum) = (0.0_f64, 0.0);
    for _ in 0..trials {
        let i = rng.random_range(0..atoms.rows());
        let t = rng.random_range(0.05..=0.95);
        let eps = normal_vec(&mut rng, h);
        let x_t: Vec<f64> = ambient_atoms
            .row_slice(i)
            .iter()
            .zip(&eps)
            .map(|(p, e)| (1.0 - t) * p + t * e)
            .collect();
        let lhs = ambient.exact_velocity(&x_t, t)?;
        let rhs = decomposition_rhs(q, &intrinsic, &x_t, t)?;
        let e = rel_err(&lhs, &rhs);
        max = max.max(e);
        sum += e;
    }
    Ok(DecompositionReport {
        config: DecompositionConfig {
            h,
            l: q.intrinsic_dim(),
            atoms: atoms.rows(),
            trials,
            seed,
        },
        max_rel_err: max,
        mean_err: sum / trials as f64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacityConfig {
    pub h: usize,
    pub widths: Vec<usize>,
    #[serde(default = "both")]
    pub wide_head: Vec<bool>,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "capacity_train")]
    pub train: TrainConfig,
    /// Timestep shift; the toy rule for `h` when absent.
    #[serde(default)]
    pub shift: Option<f64>,
}

fn both() -> Vec<bool> {
    vec![false, true]
}
fn default_depth() -> usize {
    4
}
fn capacity_train() -> TrainConfig {
    TrainConfig::new(10_000, 128, 1e-3)
}

impl CapacityConfig {
    pub fn new(h: usize, widths: Vec<usize>) -> Self {
        CapacityConfig {
            h,
            widths,
            wide_head: both(),
            depth: default_depth(),
            train: capacity_train(),
            shift: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityEntry {
    pub width: usize,
    pub wide_head: bool,
    pub final_loss: f64,
    /// `final_loss` divided by the zero-predictor loss.
    pub baseline_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityReport {
    pub config: CapacityConfig,
    pub seed: u64,
    /// Expected loss of predicting zero velocity: `1 + ‖x0‖²/h`.
    pub baseline: f64,
    pub entries: Vec<CapacityEntry>,
}

impl CapacityReport {
    pub fn entry(&self, width: usize, wide_head: bool) -> Option<&CapacityEntry> {
        self.entries
            .iter()
            .find(|e| e.width == width && e.wide_head == wide_head)
    }
}

/// The single atom: one glyph point, embedded isometrically when `h > 2`.
pub fn capacity_atom(glyph: &GlyphDistribution, h: usize, seed: u64) -> Result<Tensor> {
    let z = glyph.sample(1, derive_seed(seed, "capacity-atom"))?.points;
    match h {
        0 | 1 => Err(LabError::config("capacity probe needs h ≥ 2")),
        2 => Ok(z),
        _ => make_embedding(h, 2, derive_seed(seed, "capacity-embedding"))?.embed(&z),
    }
}

/// Fit each (width, wide-head) configuration to a single-atom dataset with
/// the same seed and budget and report the final windowed loss.
pub fn capacity_probe(
    glyph: &GlyphDistribution,
    config: &CapacityConfig,
    seed: u64,
    jobs: usize,
) -> Result<CapacityReport> {
    if config.widths.is_empty() || config.wide_head.is_empty() {
        return Err(LabError::config("capacity probe needs at least one configuration"));
    }
    let atom = capacity_atom(glyph, config.h, seed)?;
    let baseline = 1.0 + atom.data().iter().map(|v| v * v).sum::<f64>() / config.h as f64;
    let shift = config.shift.unwrap_or_else(|| toy_shift(config.h));
    let sampler = TimestepSampler::with_shift(shift);
    let data = PointSet::new(atom);
    let grid: Vec<(usize, bool)> = config
        .widths
        .iter()
        .flat_map(|&w| config.wide_head.iter().map(move |&k| (w, k)))
        .collect();
    let results = map_jobs(&grid, jobs, |&(width, wide_head)| -> Result<CapacityEntry> {
        let cfg = FlowConfig {
            dim: config.h,
            width,
            depth: config.depth,
            wide_head,
            activation: Default::default(),
        };
        let mut model = FlowModel::new(cfg, derive_seed(seed, "capacity-model"))?;
        let trace = train_flow(
            &mut model,
            &data,
            &sampler,
            &config.train,
            derive_seed(seed, "capacity-train"),
        )?;
        let final_loss = trace.final_loss().unwrap_or(baseline);
        Ok(CapacityEntry {
            width,
            wide_head,
            final_loss,
            baseline_ratio: final_loss / baseline,
        })
    });
    Ok(CapacityReport {
        config: config.clone(),
        seed,
        baseline,
        entries: results.into_iter().collect::<Result<_>>()?,
    })
}
