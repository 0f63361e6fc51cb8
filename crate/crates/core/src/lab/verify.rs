use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::Result;
use crate::flow::shift_factor;
use crate::manifold::{make_embedding, GlyphDistribution};
use crate::numeric::gradcheck::gradient_suite;
use crate::oracle::verify_decomposition;
use crate::rng::derive_seed;

pub const DECOMPOSITION_TOL: f64 = 1e-8;
pub const GRADIENT_TOL: f64 = 1e-4;
pub const SHIFT_TOL: f64 = 0.005;

/// Which built-in check to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Check {
    Decomposition,
    Gradients,
    Shift,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub check: Check,
    pub passed: bool,
    pub tolerance: f64,
    /// Largest observed error.
    pub worst: f64,
    pub details: Value,
}

pub fn verify(check: Check) -> Result<VerifyReport> {
    match check {
        Check::Decomposition => {
            let glyph = GlyphDistribution::builtin()?;
            let mut cases = Vec::new();
            for (h, l) in [(8, 2), (16, 2), (64, 8)] {
                let seed = derive_seed(h as u64, "verify-decomposition");
                let q = make_embedding(h, l, seed)?;
                let atoms = intrinsic_atoms(&glyph, l, seed)?;
                cases.push(verify_decomposition(&q, &atoms, 1000, seed)?);
            }
            let worst = cases.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
            Ok(VerifyReport {
                check,
                passed: worst <= DECOMPOSITION_TOL,
                tolerance: DECOMPOSITION_TOL,
                worst,
                details: serde_json::to_value(cases)?,
            })
        }
        Check::Gradients => {
            let cases = gradient_suite(20, 0)?;
            let worst = cases.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
            Ok(VerifyReport {
                check,
                passed: worst <= GRADIENT_TOL,
                tolerance: GRADIENT_TOL,
                worst,
                details: serde_json::to_value(cases)?,
            })
        }
        Check::Shift => {
            let a = shift_factor(16, 2)?;
            let b = shift_factor(768, 1)?;
            let worst = (a - 2.0).abs().max((b - 6.9282).abs());
            Ok(VerifyReport {
                check,
                passed: a == 2.0 && (b - 6.9282).abs() <= SHIFT_TOL,
                tolerance: SHIFT_TOL,
                worst,
                details: json!([
                    {"channels": 16, "patch": 2, "shift": a, "expected": 2.0},
                    {"channels": 768, "patch": 1, "shift": b, "expected": 6.9282},
                ]),
            })
        }
    }
}

/// 64 intrinsic atoms: glyph points for `l = 2`, otherwise glyph points
/// padded with Gaussian coordinates up to `l`.
pub fn intrinsic_atoms(glyph: &GlyphDistribution, l: usize, seed: u64) -> Result<crate::numeric::Tensor> {
    let g = glyph.sample(64, derive_seed(seed, "atoms"))?.points;
    if l <= 2 {
        return Ok(g);
    }
    let mut rng = crate::rng::rng_for(seed, "atom-padding");
    let mut data = Vec::with_capacity(64 * l);
    for i in 0..64 {
        data.extend_from_slice(g.row_slice(i));
        data.extend(crate::rng::normal_vec(&mut rng, l - 2));
    }
    crate::numeric::Tensor::matrix(64, l, data)
}
