//! Ground-truth glyph data, isometric embeddings and the toy representation map.

mod embedding;
mod glyph;
mod repmap;

pub use embedding::{make_embedding, OrthonormalEmbedding, ORTHO_TOL};
pub use glyph::{GlyphDistribution, GlyphMask, GlyphSample, Letter, BUILTIN_PBM};
pub use repmap::{RepConfig, RepresentationMap, MAX_REP_WIDTH, REP_PREFIX};
