use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::flow::path::{interpolate_batch, velocity_target_batch};
use crate::flow::{FlowModel, TimestepSampler};
use crate::manifold::{GlyphDistribution, OrthonormalEmbedding};
use crate::numeric::{AdamConfig, OptimizerState, Tape, Tensor};
use crate::rng::{normal_vec, rng_for, LabRng};

/// Source of training data rows.
pub trait DataSource {
    fn dim(&self) -> usize;
    fn sample_batch(&self, n: usize, rng: &mut LabRng) -> Result<Tensor>;
}

/// Glyph points, optionally pushed through an isometric embedding.
pub struct GlyphSource<'a> {
    pub glyph: &'a GlyphDistribution,
    pub embedding: Option<&'a OrthonormalEmbedding>,
}

impl DataSource for GlyphSource<'_> {
    fn dim(&self) -> usize {
        self.embedding.map_or(2, OrthonormalEmbedding::ambient_dim)
    }

    fn sample_batch(&self, n: usize, rng: &mut LabRng) -> Result<Tensor> {
        let z = self.glyph.sample_with(n, rng)?.points;
        match self.embedding {
            Some(q) => q.embed(&z),
            None => Ok(z),
        }
    }
}

/// Uniform draws (with replacement) from a fixed set of rows.
pub struct PointSet {
    points: Tensor,
}

impl PointSet {
    pub fn new(points: Tensor) -> Self {
        PointSet { points }
    }

    pub fn points(&self) -> &Tensor {
        &self.points
    }
}

impl DataSource for PointSet {
    fn dim(&self) -> usize {
        self.points.cols()
    }

    fn sample_batch(&self, n: usize, rng: &mut LabRng) -> Result<Tensor> {
        use rand::Rng;
        let m = self.points.rows();
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..m)).collect();
        self.points.select_rows(&idx)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
}

fn default_steps() -> usize {
    20_000
}
fn default_batch() -> usize {
    256
}
fn default_lr() -> f64 {
    1e-3
}
fn default_log_every() -> usize {
    100
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: default_steps(),
            batch: default_batch(),
            lr: default_lr(),
            log_every: default_log_every(),
        }
    }
}

impl TrainConfig {
    pub fn new(steps: usize, batch: usize, lr: f64) -> Self {
        TrainConfig {
            steps,
            batch,
            lr,
            log_every: default_log_every(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.log_every == 0 || !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(LabError::config(format!("invalid training config {self:?}")));
        }
        Ok(())
    }
}

/// One loss-trace record: mean training loss over the window ending at `step`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub points: Vec<LossPoint>,
}

impl LossTrace {
    /// Mean of the last window, if any steps ran.
    pub fn final_loss(&self) -> Option<f64> {
        self.points.last().map(|p| p.loss)
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let mut out = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(&mut w);
        out.write_record(["step", "loss"])?;
        for p in &self.points {
            out.write_record([p.step.to_string(), p.loss.to_string()])?;
        }
        out.flush().map_err(|e| LabError::io("<loss trace>", e))?;
        Ok(())
    }
}

pub(crate) struct TraceRecorder {
    every: usize,
    sum: f64,
    count: usize,
    trace: LossTrace,
}

/// Accumulates per-step losses into windowed means.
impl TraceRecorder {
    pub(crate) fn new(every: usize) -> Self {
        TraceRecorder {
            every,
            sum: 0.0,
            count: 0,
            trace: LossTrace::default(),
        }
    }

    pub(crate) fn push(&mut self, step: usize, loss: f64) {
        self.sum += loss;
        self.count += 1;
        if step % self.every == 0 {
            self.flush(step);
        }
    }

    fn flush(&mut self, step: usize) {
        if self.count > 0 {
            self.trace.points.push(LossPoint {
                step,
                loss: self.sum / self.count as f64,
            });
            self.sum = 0.0;
            self.count = 0;
        }
    }

    pub(crate) fn finish(mut self, last_step: usize) -> LossTrace {
        self.flush(last_step);
        self.trace
    }
}

/// Flow-matching regression of `model(x_t, t)` onto `eps − x0`.
///
/// Data, noise and timesteps come from three independent streams derived
/// from `seed`, so equal seeds give bit-identical traces and parameters.
pub fn train_flow(
    model: &mut FlowModel,
    data: &dyn DataSource,
    timesteps: &TimestepSampler,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<LossTrace> {
    cfg.validate()?;
    timesteps.validate()?;
    if data.dim() != model.dim() {
        return Err(LabError::config(format!(
            "data width {} does not match model width {}",
            data.dim(),
            model.dim()
        )));
    }
    let mut opt = OptimizerState::new(model.params(), AdamConfig::with_lr(cfg.lr))?;
    let mut data_rng = rng_for(seed, "train-data");
    let mut noise_rng = rng_for(seed, "train-noise");
    let mut time_rng = rng_for(seed, "train-time");
    let mut rec = TraceRecorder::new(cfg.log_every);
    let (b, d) = (cfg.batch, model.dim());

    for step in 1..=cfg.steps {
        let x0 = data.sample_batch(b, &mut data_rng)?;
        let eps = Tensor::matrix(b, d, normal_vec(&mut noise_rng, b * d))?;
        let t: Vec<f64> = (0..b).map(|_| timesteps.draw(&mut time_rng)).collect();
        let x_t = interpolate_batch(&x0, &eps, &t)?;
        let target = velocity_target_batch(&x0, &eps)?;

        let mut tape = Tape::new();
        let pred = model.forward(&mut tape, &x_t, &t)?;
        let target = tape.constant(target);
        let loss = tape.mse(pred, target)?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(LabError::Divergence {
                step,
                detail: format!("flow loss is {value}"),
            });
        }
        tape.backward(loss)?.write_to(model.params_mut());
        opt.step(model.params_mut())?;
        if let Some(name) = model.params().first_non_finite() {
            return Err(LabError::Divergence {
                step,
                detail: format!("parameter `{name}` became non-finite"),
            });
        }
        rec.push(step, value);
    }
    Ok(rec.finish(cfg.steps))
}
