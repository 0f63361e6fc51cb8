use serde::{Deserialize, Serialize};

use crate::codec::decoder::{DecoderConfig, PixelDecoder};
use crate::codec::model::{CodecConfig, LatentCodec};
use crate::codec::probe::semantic_probe;
use crate::error::Result;
use crate::flow::DataSource;
use crate::manifold::{GlyphDistribution, RepresentationMap};
use crate::metrics::mse;
use crate::numeric::Tensor;
use crate::rng::{derive_seed, LabRng};

/// Size of the held-out evaluation batch.
pub const EVAL_SIZE: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Pixel decoder on the raw frozen features.
    Rae,
    /// Semantic VAE, stage 1 only.
    SVae,
    /// Both stages with the semantic weight set to zero.
    PVae,
    /// Both stages.
    PsVae,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Rae, Variant::SVae, Variant::PVae, Variant::PsVae];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Rae => "rae",
            Variant::SVae => "s-vae",
            Variant::PVae => "p-vae",
            Variant::PsVae => "ps-vae",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: Variant,
    pub seed: u64,
    pub pixel_mse: f64,
    /// `None` for the RAE, which has no semantic decoder.
    pub semantic_loss: Option<f64>,
    pub kl: Option<f64>,
    pub probe_accuracy: f64,
    /// Pixel MSE at the end of stage 1, for two-stage variants.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stage1_pixel_mse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub semantic_drift: Option<f64>,
}

/// A trained ladder rung.
#[derive(Clone, Debug)]
pub enum Trained {
    Rae(Box<PixelDecoder>),
    Codec(Box<LatentCodec>),
}

/// Train one rung of the ladder and score it on a held-out batch.
pub fn run_variant(
    variant: Variant,
    config: &CodecConfig,
    rae_decoder: &DecoderConfig,
    glyph: &GlyphDistribution,
    seed: u64,
) -> Result<(VariantReport, Trained)> {
    let eval = glyph.sample(EVAL_SIZE, derive_seed(seed, "ladder-eval"))?;
    let mut cfg = config.clone();
    if variant == Variant::PVae {
        cfg.weights.semantic = 0.0;
    }
    let mut codec = LatentCodec::new(cfg, glyph, seed)?;
    if variant == Variant::Rae {
        let map = codec.frozen().clone();
        let (dec, _) = PixelDecoder::train(&map, None, glyph, rae_decoder, derive_seed(seed, "rae-decoder"))?;
        let feats = map.encode(&eval.points)?;
        let report = VariantReport {
            variant,
            seed,
            pixel_mse: mse(&dec.decode(&feats)?, &eval.points)?,
            semantic_loss: None,
            kl: None,
            probe_accuracy: semantic_probe(&feats, &eval.labels)?,
            stage1_pixel_mse: None,
            semantic_drift: None,
        };
        return Ok((report, Trained::Rae(Box::new(dec))));
    }
    codec.train_stage1(glyph, derive_seed(seed, "stage1"))?;
    let mut stage1_pixel_mse = None;
    if variant != Variant::SVae {
        stage1_pixel_mse = Some(codec.evaluate(&eval.points)?.pixel_mse);
        codec.train_stage2(glyph, derive_seed(seed, "stage2"))?;
    }
    let scores = codec.evaluate(&eval.points)?;
    let report = VariantReport {
        variant,
        seed,
        pixel_mse: scores.pixel_mse,
        semantic_loss: Some(scores.semantic_loss),
        kl: Some(scores.kl),
        probe_accuracy: semantic_probe(&codec.latents(&eval.points)?, &eval.labels)?,
        stage1_pixel_mse,
        semantic_drift: Some(scores.semantic_drift),
    };
    Ok((report, Trained::Codec(Box::new(codec))))
}

/// Features of fresh glyph samples under a fixed map.
pub struct FeatureSource<'a> {
    pub map: &'a RepresentationMap,
    pub glyph: &'a GlyphDistribution,
}

impl DataSource for FeatureSource<'_> {
    fn dim(&self) -> usize {
        self.map.width()
    }

    fn sample_batch(&self, n: usize, rng: &mut LabRng) -> Result<Tensor> {
        self.map.encode(&self.glyph.sample_with(n, rng)?.points)
    }
}

/// Posterior means of fresh glyph samples under a trained codec.
pub struct LatentSource<'a> {
    pub codec: &'a LatentCodec,
    pub glyph: &'a GlyphDistribution,
}

impl DataSource for LatentSource<'_> {
    fn dim(&self) -> usize {
        self.codec.latent_dim()
    }

    fn sample_batch(&self, n: usize, rng: &mut LabRng) -> Result<Tensor> {
        self.codec.latents(&self.glyph.sample_with(n, rng)?.points)
    }
}
