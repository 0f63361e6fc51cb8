use serde::{Deserialize, Serialize};

use crate::codec::losses::{semantic_term, LossWeights, LOGVAR_MAX, LOGVAR_MIN};
use crate::error::{LabError, Result};
use crate::flow::{LossTrace, TraceRecorder};
use crate::manifold::{GlyphDistribution, RepConfig, RepresentationMap, REP_PREFIX};
use crate::numeric::{AdamConfig, Init, Mlp, MlpSpec, OptimizerState, ParamSet, Tape, Tensor, Var};
use crate::rng::{derive_seed, normal_vec, rng_for, LabRng};

const ENC: &str = "enc";
const SDEC: &str = "sdec";
const PDEC: &str = "pdec";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecConfig {
    #[serde(default)]
    pub rep: RepConfig,
    /// Latent width `d_l`.
    #[serde(default = "default_latent")]
    pub latent: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    /// Hidden layers of E_s, D_s and D_p.
    #[serde(default = "default_layers")]
    pub hidden_layers: usize,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default = "default_stage_steps")]
    pub stage1_steps: usize,
    #[serde(default = "default_stage_steps")]
    pub stage2_steps: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// Stage-2 learning rate; `lr` when absent.
    #[serde(default)]
    pub stage2_lr: Option<f64>,
}

fn default_latent() -> usize {
    2
}
fn default_hidden() -> usize {
    128
}
fn default_layers() -> usize {
    3
}
fn default_stage_steps() -> usize {
    4000
}
fn default_batch() -> usize {
    256
}
fn default_lr() -> f64 {
    1e-3
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            rep: RepConfig::default(),
            latent: default_latent(),
            hidden: default_hidden(),
            hidden_layers: default_layers(),
            weights: LossWeights::default(),
            stage1_steps: default_stage_steps(),
            stage2_steps: default_stage_steps(),
            batch: default_batch(),
            lr: default_lr(),
            stage2_lr: None,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        self.rep.validate()?;
        self.weights.validate()?;
        if self.latent == 0 || self.latent >= self.rep.width {
            return Err(LabError::config(format!(
                "latent width must satisfy 1 ≤ d_l < d_h, got d_l={}, d_h={}",
                self.latent, self.rep.width
            )));
        }
        let lr_ok = |lr: f64| lr > 0.0 && lr.is_finite();
        if self.hidden == 0 || self.batch == 0 || !lr_ok(self.lr) || !self.stage2_lr.map_or(true, lr_ok) {
            return Err(LabError::config("codec hidden width, batch and lr must be positive"));
        }
        Ok(())
    }

    fn mlp(&self, input: usize, output: usize) -> MlpSpec {
        MlpSpec::new(input, vec![self.hidden; self.hidden_layers], output)
    }
}

/// How [`LatentCodec::encode`] turns a posterior into a latent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sampling {
    /// Return `μ`.
    Mean,
    /// Reparameterized draw with noise from `seed`.
    Draw(u64),
}

#[derive(Clone, Debug)]
pub struct Encoded {
    pub z: Tensor,
    pub mu: Tensor,
    pub logvar: Tensor,
}

/// Which components a training step updates and which losses it uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stage {
    One,
    Two,
}

/// Semantic VAE over representation features with a pixel decoder.
///
/// Holds the frozen representation map and, in its own parameter set, a
/// trainable working copy (`rep.*`) plus E_s (`enc.*`), D_s (`sdec.*`) and
/// D_p (`pdec.*`).
#[derive(Clone, Debug)]
pub struct LatentCodec {
    config: CodecConfig,
    frozen: RepresentationMap,
    params: ParamSet,
    rep: Mlp,
    enc: Mlp,
    sdec: Mlp,
    pdec: Mlp,
}

impl LatentCodec {
    pub fn new(config: CodecConfig, glyph: &GlyphDistribution, seed: u64) -> Result<Self> {
        config.validate()?;
        let frozen = RepresentationMap::new(config.rep.clone(), glyph, derive_seed(seed, "codec-rep"))?;
        let mut params = frozen.params().clone();
        let rep = Mlp::attach(config.rep.mlp_spec(), REP_PREFIX, &params)?;
        let mut rng = rng_for(seed, "codec-init");
        let (dh, dl) = (config.rep.width, config.latent);
        let enc = Mlp::build(config.mlp(dh, 2 * dl), ENC, &mut params, Init::default(), &mut rng)?;
        let sdec = Mlp::build(config.mlp(dl, dh), SDEC, &mut params, Init::default(), &mut rng)?;
        let pdec = Mlp::build(config.mlp(dl, 2), PDEC, &mut params, Init::default(), &mut rng)?;
        Ok(LatentCodec {
            config,
            frozen,
            params,
            rep,
            enc,
            sdec,
            pdec,
        })
    }

    pub fn config(&self) -> &CodecConfig {
        &self.config
    }

    pub fn frozen(&self) -> &RepresentationMap {
        &self.frozen
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent
    }

    /// The working copy as a standalone map.
    pub fn working_map(&self) -> Result<RepresentationMap> {
        self.frozen.with_params(&self.params)
    }

    /// Working-copy features `f'_h`.
    pub fn features(&self, pixels: &Tensor) -> Result<Tensor> {
        self.rep.infer(&self.params, pixels, None)
    }

    fn split_posterior(&self, raw: &Tensor) -> Result<(Tensor, Tensor)> {
        let dl = self.config.latent;
        let mu = raw.select_cols(&(0..dl).collect::<Vec<_>>())?;
        let lv = raw
            .select_cols(&(dl..2 * dl).collect::<Vec<_>>())?
            .map(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX));
        Ok((mu, lv))
    }

    /// E_s on features; `logvar` is clamped to `[−12, 6]`.
    pub fn encode(&self, features: &Tensor, sampling: Sampling) -> Result<Encoded> {
        let raw = self.enc.infer(&self.params, features, None)?;
        let (mu, logvar) = self.split_posterior(&raw)?;
        let z = match sampling {
            Sampling::Mean => mu.clone(),
            Sampling::Draw(seed) => {
                let eps = normal_vec(&mut rng_for(seed, "codec-encode"), mu.len());
                let data = mu
                    .data()
                    .iter()
                    .zip(logvar.data())
                    .zip(eps)
                    .map(|((m, l), e)| m + (0.5 * l).exp() * e)
                    .collect();
                Tensor::matrix(mu.rows(), mu.cols(), data)?
            }
        };
        Ok(Encoded { z, mu, logvar })
    }

    /// Posterior means of the working features of `pixels`.
    pub fn latents(&self, pixels: &Tensor) -> Result<Tensor> {
        Ok(self.encode(&self.features(pixels)?, Sampling::Mean)?.mu)
    }

    /// D_s: latent to features.
    pub fn decode_semantic(&self, z: &Tensor) -> Result<Tensor> {
        self.sdec.infer(&self.params, z, None)
    }

    /// D_p: latent to pixels.
    pub fn decode_pipeline(&self, z: &Tensor) -> Result<Tensor> {
        if z.cols() != self.config.latent {
            return Err(LabError::config(format!(
                "latent width {} expected, got {}",
                self.config.latent,
                z.cols()
            )));
        }
        self.pdec.infer(&self.params, z, None)
    }

    /// Deterministic encode-then-decode.
    pub fn reconstruct(&self, pixels: &Tensor) -> Result<Tensor> {
        self.decode_pipeline(&self.latents(pixels)?)
    }

    fn posterior_on_tape(&self, tape: &mut Tape, feats: Var, eps: Tensor) -> Result<(Var, Var, Var)> {
        let dl = self.config.latent;
        let raw = self.enc.forward(tape, &self.params, feats, None)?;
        let mu = tape.slice_cols(raw, 0, dl)?;
        let lv = tape.slice_cols(raw, dl, 2 * dl)?;
        let lv = tape.clamp(lv, LOGVAR_MIN, LOGVAR_MAX);
        let half = tape.scale(lv, 0.5);
        let sigma = tape.exp(half);
        let eps = tape.constant(eps);
        let noise = tape.mul(sigma, eps)?;
        let z = tape.add(mu, noise)?;
        Ok((z, mu, lv))
    }

    /// Total loss of one batch, recorded on `tape`.
    fn step_loss(&self, tape: &mut Tape, stage: Stage, pixels: &Tensor, eps: Tensor) -> Result<Var> {
        let w = &self.config.weights;
        let target = tape.constant(self.frozen.encode(pixels)?);
        let x = tape.constant(pixels.clone());
        let feats = match stage {
            Stage::One => target,
            Stage::Two => self.rep.forward(tape, &self.params, x, None)?,
        };
        let (z, mu, lv) = self.posterior_on_tape(tape, feats, eps)?;
        let recon = self.sdec.forward(tape, &self.params, z, None)?;
        let mut semantic = semantic_term(tape, recon, target)?;
        if stage == Stage::Two {
            let drift = semantic_term(tape, feats, target)?;
            semantic = tape.add(semantic, drift)?;
        }
        let kl = tape.kl_std_normal(mu, lv)?;
        let pix_in = match stage {
            Stage::One => tape.detach(z),
            Stage::Two => z,
        };
        let decoded = self.pdec.forward(tape, &self.params, pix_in, None)?;
        let pixel = tape.mse(decoded, x)?;
        let a = tape.scale(semantic, w.semantic);
        let b = tape.scale(kl, w.kl);
        let c = tape.scale(pixel, w.pixel);
        let ab = tape.add(a, b)?;
        tape.add(ab, c)
    }

    /// Gradients of one stage-1 batch, for inspecting the detach contract.
    pub fn stage1_gradients(&self, pixels: &Tensor, seed: u64) -> Result<ParamSet> {
        let mut probe = self.clone();
        let mut tape = Tape::new();
        let eps = Tensor::matrix(
            pixels.rows(),
            self.config.latent,
            normal_vec(&mut rng_for(seed, "codec-eps"), pixels.rows() * self.config.latent),
        )?;
        let loss = probe.step_loss(&mut tape, Stage::One, pixels, eps)?;
        probe.params.clear_grads();
        tape.backward(loss)?.write_to(&mut probe.params);
        Ok(probe.params)
    }

    fn train(&mut self, glyph: &GlyphDistribution, stage: Stage, steps: usize, seed: u64) -> Result<LossTrace> {
        let trainable = |name: &str| match stage {
            Stage::One => !name.starts_with(REP_PREFIX),
            Stage::Two => true,
        };
        let tag = match stage {
            Stage::One => "stage1",
            Stage::Two => "stage2",
        };
        let lr = match stage {
            Stage::One => self.config.lr,
            Stage::Two => self.config.stage2_lr.unwrap_or(self.config.lr),
        };
        let mut opt = OptimizerState::new(&self.params, AdamConfig::with_lr(lr))?;
        let mut data_rng: LabRng = rng_for(seed, &format!("{tag}-data"));
        let mut noise_rng = rng_for(seed, &format!("{tag}-noise"));
        let mut rec = TraceRecorder::new(100);
        let (b, dl) = (self.config.batch, self.config.latent);
        for step in 1..=steps {
            let pixels = glyph.sample_with(b, &mut data_rng)?.points;
            let eps = Tensor::matrix(b, dl, normal_vec(&mut noise_rng, b * dl))?;
            let mut tape = Tape::new();
            let loss = self.step_loss(&mut tape, stage, &pixels, eps)?;
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(LabError::Divergence {
                    step,
                    detail: format!("codec {tag} loss is {value}"),
                });
            }
            self.params.clear_grads();
            tape.backward(loss)?.write_to(&mut self.params);
            opt.step_where(&mut self.params, trainable)?;
            if let Some(name) = self.params.first_non_finite() {
                return Err(LabError::Divergence {
                    step,
                    detail: format!("parameter `{name}` became non-finite"),
                });
            }
            rec.push(step, value);
        }
        Ok(rec.finish(steps))
    }

    /// Stage 1: E_s and D_s on the frozen features, D_p on a detached latent.
    pub fn train_stage1(&mut self, glyph: &GlyphDistribution, seed: u64) -> Result<LossTrace> {
        let steps = self.config.stage1_steps;
        self.train(glyph, Stage::One, steps, seed)
    }

    /// Stage 2: everything unfrozen, semantic terms anchored to the frozen map.
    pub fn train_stage2(&mut self, glyph: &GlyphDistribution, seed: u64) -> Result<LossTrace> {
        let steps = self.config.stage2_steps;
        self.train(glyph, Stage::Two, steps, seed)
    }

    /// Held-out scores on `pixels` in deterministic mode.
    pub fn evaluate(&self, pixels: &Tensor) -> Result<CodecScores> {
        use crate::codec::losses::{kl_loss, pixel_loss, semantic_loss};
        let frozen = self.frozen.encode(pixels)?;
        let feats = self.features(pixels)?;
        let enc = self.encode(&feats, Sampling::Mean)?;
        Ok(CodecScores {
            pixel_mse: pixel_loss(&self.decode_pipeline(&enc.mu)?, pixels)?,
            semantic_loss: semantic_loss(&self.decode_semantic(&enc.mu)?, &frozen)?,
            semantic_drift: semantic_loss(&feats, &frozen)?,
            kl: kl_loss(&enc.mu, &enc.logvar)?,
        })
    }
}

/// Held-out codec measurements.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodecScores {
    pub pixel_mse: f64,
    /// D_s(μ) against the frozen features.
    pub semantic_loss: f64,
    /// Working features against the frozen features.
    pub semantic_drift: f64,
    pub kl: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CodecConfig {
        CodecConfig {
            rep: RepConfig {
                width: 16,
                hidden: 16,
                calibration: 256,
                ..RepConfig::default()
            },
            hidden: 16,
            stage1_steps: 20,
            stage2_steps: 20,
            batch: 16,
            ..CodecConfig::default()
        }
    }

    #[test]
    fn mean_mode_returns_mu() {
        let g = GlyphDistribution::builtin().unwrap();
        let c = LatentCodec::new(small(), &g, 0).unwrap();
        let f = c.features(&g.sample(8, 1).unwrap().points).unwrap();
        let e = c.encode(&f, Sampling::Mean).unwrap();
        assert_eq!(e.z, e.mu);
        assert!(e.logvar.data().iter().all(|v| (LOGVAR_MIN..=LOGVAR_MAX).contains(v)));
    }

    #[test]
    fn pixel_loss_alone_leaves_encoder_gradients_zero() {
        let g = GlyphDistribution::builtin().unwrap();
        let mut cfg = small();
        cfg.weights = LossWeights {
            semantic: 0.0,
            pixel: 1.0,
            kl: 0.0,
        };
        let c = LatentCodec::new(cfg, &g, 2).unwrap();
        let grads = c.stage1_gradients(&g.sample(16, 3).unwrap().points, 4).unwrap();
        let mut pdec_moves = false;
        for id in grads.ids() {
            let name = grads.name(id);
            match grads.grad(id) {
                Some(gr) if name.starts_with(ENC) => assert!(gr.data().iter().all(|&v| v == 0.0), "{name}"),
                Some(gr) if name.starts_with(PDEC) => pdec_moves |= gr.max_abs() > 0.0,
                Some(_) => {}
                None => assert!(name.starts_with(REP_PREFIX), "{name} has no gradient"),
            }
        }
        assert!(pdec_moves);
    }

    #[test]
    fn zero_objective_keeps_semantic_parts_fixed() {
        let g = GlyphDistribution::builtin().unwrap();
        let mut cfg = small();
        cfg.weights = LossWeights {
            semantic: 0.0,
            pixel: 0.1,
            kl: 0.0,
        };
        let mut c = LatentCodec::new(cfg, &g, 5).unwrap();
        let before = c.params().clone();
        c.train_stage1(&g, 6).unwrap();
        for (name, v) in c.params().iter() {
            if name.starts_with(ENC) || name.starts_with(SDEC) || name.starts_with(REP_PREFIX) {
                assert_eq!(v, before.get(name).unwrap(), "{name}");
            }
        }
    }

    #[test]
    fn frozen_copy_survives_both_stages() {
        let g = GlyphDistribution::builtin().unwrap();
        let mut c = LatentCodec::new(small(), &g, 7).unwrap();
        let snapshot = c.frozen().params().clone();
        c.train_stage1(&g, 8).unwrap();
        c.train_stage2(&g, 9).unwrap();
        assert!(c.frozen().params().bit_identical(&snapshot));
        assert!(!c.params().subset(REP_PREFIX).unwrap().bit_identical(&snapshot));
    }

    #[test]
    fn latent_width_must_be_below_feature_width() {
        let g = GlyphDistribution::builtin().unwrap();
        let mut cfg = small();
        cfg.latent = 16;
        assert!(LatentCodec::new(cfg, &g, 0).is_err());
    }

    #[test]
    fn zero_latent_decodes_finitely() {
        let g = GlyphDistribution::builtin().unwrap();
        let c = LatentCodec::new(small(), &g, 0).unwrap();
        assert!(c.decode_pipeline(&Tensor::zeros(&[1, 2])).unwrap().all_finite());
    }
}
