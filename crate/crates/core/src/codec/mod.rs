//! The autoencoder ladder: raw features (RAE), semantic VAE (S-VAE),
//! pixel-only VAE (P-VAE) and the two-stage pixel-semantic VAE (PS-VAE),
//! plus the high-dimensional shortcut diagnostic.

mod decoder;
mod ladder;
mod losses;
mod model;
mod probe;

pub use decoder::{
    default_top_k, finetune_high_dim, shortcut_diagnostic, DecoderConfig, FinetuneConfig, PixelDecoder, ShortcutReport,
};
pub use ladder::{run_variant, FeatureSource, LatentSource, Trained, Variant, VariantReport, EVAL_SIZE};
pub use losses::{kl_loss, pixel_loss, semantic_loss, LossBundle, LossWeights, LOGVAR_MAX, LOGVAR_MIN};
pub use model::{CodecConfig, CodecScores, Encoded, LatentCodec, Sampling};
pub use probe::semantic_probe;
