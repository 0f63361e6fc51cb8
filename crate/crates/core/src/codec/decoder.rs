use serde::{Deserialize, Serialize};

use crate::codec::losses::semantic_term;
use crate::error::{LabError, Result};
use crate::flow::{LossTrace, TraceRecorder};
use crate::manifold::{GlyphDistribution, RepresentationMap, REP_PREFIX};
use crate::metrics::mse;
use crate::numeric::{AdamConfig, Init, Mlp, MlpSpec, OptimizerState, ParamSet, Tape, Tensor};
use crate::rng::{derive_seed, rng_for};

const PDEC: &str = "pdec";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_layers")]
    pub hidden_layers: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
}

fn default_hidden() -> usize {
    128
}
fn default_layers() -> usize {
    3
}
fn default_steps() -> usize {
    4000
}
fn default_batch() -> usize {
    256
}
fn default_lr() -> f64 {
    1e-3
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            hidden: default_hidden(),
            hidden_layers: default_layers(),
            steps: default_steps(),
            batch: default_batch(),
            lr: default_lr(),
        }
    }
}

/// Pixel decoder reading a fixed feature map, optionally restricted to a
/// subset of its channels.
#[derive(Clone, Debug)]
pub struct PixelDecoder {
    map: RepresentationMap,
    columns: Option<Vec<usize>>,
    mlp: Mlp,
    params: ParamSet,
}

impl PixelDecoder {
    /// Fit a fresh decoder to reconstruct glyph pixels from `map` features.
    pub fn train(
        map: &RepresentationMap,
        columns: Option<Vec<usize>>,
        glyph: &GlyphDistribution,
        cfg: &DecoderConfig,
        seed: u64,
    ) -> Result<(PixelDecoder, LossTrace)> {
        let width = match &columns {
            Some(c) if c.is_empty() || c.iter().any(|&j| j >= map.width()) => {
                return Err(LabError::config("decoder channel selection out of range"))
            }
            Some(c) => c.len(),
            None => map.width(),
        };
        let spec = MlpSpec::new(width, vec![cfg.hidden; cfg.hidden_layers], 2);
        let mut params = ParamSet::new();
        let mlp = Mlp::build(
            spec,
            PDEC,
            &mut params,
            Init::default(),
            &mut rng_for(seed, "decoder-init"),
        )?;
        let mut dec = PixelDecoder {
            map: map.clone(),
            columns,
            mlp,
            params,
        };
        let mut opt = OptimizerState::new(&dec.params, AdamConfig::with_lr(cfg.lr))?;
        let mut rng = rng_for(seed, "decoder-data");
        let mut rec = TraceRecorder::new(100);
        for step in 1..=cfg.steps {
            let pixels = glyph.sample_with(cfg.batch, &mut rng)?.points;
            let feats = dec.inputs(&pixels)?;
            let mut tape = Tape::new();
            let f = tape.constant(feats);
            let x = tape.constant(pixels);
            let out = dec.mlp.forward(&mut tape, &dec.params, f, None)?;
            let loss = tape.mse(out, x)?;
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(LabError::Divergence {
                    step,
                    detail: format!("decoder loss is {value}"),
                });
            }
            tape.backward(loss)?.write_to(&mut dec.params);
            opt.step(&mut dec.params)?;
            rec.push(step, value);
        }
        Ok((dec, rec.finish(cfg.steps)))
    }

    fn inputs(&self, pixels: &Tensor) -> Result<Tensor> {
        let f = self.map.encode(pixels)?;
        match &self.columns {
            Some(c) => f.select_cols(c),
            None => Ok(f),
        }
    }

    /// Decode already-computed full-width features.
    pub fn decode(&self, features: &Tensor) -> Result<Tensor> {
        let f = match &self.columns {
            Some(c) => features.select_cols(c)?,
            None => features.clone(),
        };
        self.mlp.infer(&self.params, &f, None)
    }

    /// Encode with the map, then decode.
    pub fn reconstruct(&self, pixels: &Tensor) -> Result<Tensor> {
        self.mlp.infer(&self.params, &self.inputs(pixels)?, None)
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn map(&self) -> &RepresentationMap {
        &self.map
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneConfig {
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "one")]
    pub semantic_weight: f64,
    #[serde(default = "tenth")]
    pub pixel_weight: f64,
    #[serde(default)]
    pub decoder: DecoderConfig,
}

fn one() -> f64 {
    1.0
}
fn tenth() -> f64 {
    0.1
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            steps: default_steps(),
            batch: default_batch(),
            lr: default_lr(),
            semantic_weight: 1.0,
            pixel_weight: 0.1,
            decoder: DecoderConfig::default(),
        }
    }
}

/// Jointly train an unfrozen copy of `frozen` and a full-width pixel decoder,
/// anchoring the copy's features to the frozen ones. Returns the fine-tuned
/// map.
pub fn finetune_high_dim(
    frozen: &RepresentationMap,
    glyph: &GlyphDistribution,
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<(RepresentationMap, LossTrace)> {
    let mut params = frozen.params().clone();
    let rep = Mlp::attach(frozen.config().mlp_spec(), REP_PREFIX, &params)?;
    let spec = MlpSpec::new(frozen.width(), vec![cfg.decoder.hidden; cfg.decoder.hidden_layers], 2);
    let dec = Mlp::build(
        spec,
        PDEC,
        &mut params,
        Init::default(),
        &mut rng_for(seed, "finetune-init"),
    )?;
    let mut opt = OptimizerState::new(&params, AdamConfig::with_lr(cfg.lr))?;
    let mut rng = rng_for(seed, "finetune-data");
    let mut rec = TraceRecorder::new(100);
    for step in 1..=cfg.steps {
        let pixels = glyph.sample_with(cfg.batch, &mut rng)?.points;
        let mut tape = Tape::new();
        let target = tape.constant(frozen.encode(&pixels)?);
        let x = tape.constant(pixels);
        let f = rep.forward(&mut tape, &params, x, None)?;
        let out = dec.forward(&mut tape, &params, f, None)?;
        let pix = tape.mse(out, x)?;
        let sem = semantic_term(&mut tape, f, target)?;
        let a = tape.scale(pix, cfg.pixel_weight);
        let b = tape.scale(sem, cfg.semantic_weight);
        let loss = tape.add(a, b)?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(LabError::Divergence {
                step,
                detail: format!("fine-tuning loss is {value}"),
            });
        }
        tape.backward(loss)?.write_to(&mut params);
        opt.step(&mut params)?;
        rec.push(step, value);
    }
    Ok((frozen.with_params(&params)?, rec.finish(cfg.steps)))
}

/// Default channel budget: `⌈d_h / 24⌉`.
pub fn default_top_k(width: usize) -> usize {
    width.div_ceil(24)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShortcutReport {
    pub width: usize,
    pub top_k: usize,
    /// Selected channels in their original order.
    pub channels: Vec<usize>,
    /// Mean absolute working-vs-frozen deviation of each selected channel.
    pub channel_deviation: Vec<f64>,
    pub mean_deviation: f64,
    pub full_mse: f64,
    pub top_k_mse: f64,
    /// `top_k_mse / full_mse`.
    pub ratio: f64,
}

/// Rank channels of `working` by mean absolute deviation from `frozen` on a
/// held-out batch, retrain fresh pixel decoders on the top-`k` channels and
/// on all channels with the same protocol, and compare held-out pixel MSE.
pub fn shortcut_diagnostic(
    working: &RepresentationMap,
    frozen: &RepresentationMap,
    glyph: &GlyphDistribution,
    k: usize,
    decoder: &DecoderConfig,
    seed: u64,
) -> Result<ShortcutReport> {
    let width = working.width();
    if k == 0 || k > width {
        return Err(LabError::config(format!("top-k must satisfy 1 ≤ k ≤ {width}, got {k}")));
    }
    if frozen.width() != width {
        return Err(LabError::config("working and frozen maps differ in width"));
    }
    let probe = glyph.sample(4096, derive_seed(seed, "shortcut-rank"))?.points;
    let (fw, ff) = (working.encode(&probe)?, frozen.encode(&probe)?);
    let mut dev = vec![0.0; width];
    for i in 0..fw.rows() {
        for (j, d) in dev.iter_mut().enumerate() {
            *d += (fw.get(i, j) - ff.get(i, j)).abs();
        }
    }
    dev.iter_mut().for_each(|d| *d /= fw.rows() as f64);
    let mut order: Vec<usize> = (0..width).collect();
    order.sort_by(|&a, &b| dev[b].total_cmp(&dev[a]).then(a.cmp(&b)));
    let mut channels = order[..k].to_vec();
    channels.sort_unstable();

    let held_out = glyph.sample(4096, derive_seed(seed, "shortcut-eval"))?.points;
    let dseed = derive_seed(seed, "shortcut-decoder");
    let (full, _) = PixelDecoder::train(working, Some((0..width).collect()), glyph, decoder, dseed)?;
    let (top, _) = PixelDecoder::train(working, Some(channels.clone()), glyph, decoder, dseed)?;
    let full_mse = mse(&full.reconstruct(&held_out)?, &held_out)?;
    let top_k_mse = mse(&top.reconstruct(&held_out)?, &held_out)?;
    Ok(ShortcutReport {
        width,
        top_k: k,
        channel_deviation: channels.iter().map(|&j| dev[j]).collect(),
        channels,
        mean_deviation: dev.iter().sum::<f64>() / width as f64,
        full_mse,
        top_k_mse,
        ratio: top_k_mse / full_mse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::RepConfig;

    fn tiny_map(g: &GlyphDistribution) -> RepresentationMap {
        let cfg = RepConfig {
            width: 12,
            hidden: 16,
            calibration: 256,
            ..RepConfig::default()
        };
        RepresentationMap::new(cfg, g, 1).unwrap()
    }

    fn quick() -> DecoderConfig {
        DecoderConfig {
            hidden: 16,
            steps: 30,
            batch: 32,
            ..DecoderConfig::default()
        }
    }

    #[test]
    fn full_selection_gives_unit_ratio() {
        let g = GlyphDistribution::builtin().unwrap();
        let m = tiny_map(&g);
        let r = shortcut_diagnostic(&m, &m, &g, 12, &quick(), 3).unwrap();
        assert_eq!(r.ratio, 1.0);
        assert_eq!(r.channels, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn k_bounds_are_enforced() {
        let g = GlyphDistribution::builtin().unwrap();
        let m = tiny_map(&g);
        assert!(matches!(
            shortcut_diagnostic(&m, &m, &g, 0, &quick(), 0),
            Err(LabError::Config(_))
        ));
        assert!(matches!(
            shortcut_diagnostic(&m, &m, &g, 13, &quick(), 0),
            Err(LabError::Config(_))
        ));
    }

    #[test]
    fn default_budget_matches_ratio() {
        assert_eq!(default_top_k(768), 32);
        assert_eq!(default_top_k(64), 3);
        assert_eq!(default_top_k(24), 1);
    }
}
