//! Generation-quality measurements: nearest-neighbour distances against a
//! reference set, tail statistics and off-manifold residuals.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};
use crate::manifold::{GlyphDistribution, OrthonormalEmbedding};
use crate::numeric::Tensor;

/// Size of the ground-truth reference set.
pub const REFERENCE_SIZE: usize = 100_000;
/// Seed of the ground-truth reference set.
pub const REFERENCE_SEED: u64 = 20_251_017;
/// Default tail fraction.
pub const TAIL_Q: f64 = 0.05;

/// The fixed reference sample every toy metric is computed against.
pub fn reference_set(glyph: &GlyphDistribution) -> Result<Tensor> {
    Ok(glyph.sample(REFERENCE_SIZE, REFERENCE_SEED)?.points)
}

/// SHA-256 over shape and little-endian values.
pub fn tensor_hash(t: &Tensor) -> String {
    let mut h = Sha256::new();
    for &d in t.shape() {
        h.update((d as u64).to_le_bytes());
    }
    for v in t.data() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Exact Euclidean distance from each sample row to its nearest reference row.
pub fn nn_distances(samples: &Tensor, reference: &Tensor) -> Result<Vec<f64>> {
    if reference.shape().len() != 2 || reference.rows() == 0 {
        return Err(LabError::config("reference set is empty"));
    }
    if samples.cols() != reference.cols() {
        return Err(LabError::config(format!(
            "sample width {} does not match reference width {}",
            samples.cols(),
            reference.cols()
        )));
    }
    let d = reference.cols();
    let refs = reference.data();
    Ok((0..samples.rows())
        .map(|i| {
            let s = samples.row_slice(i);
            let best = refs
                .chunks_exact(d)
                .map(|r| r.iter().zip(s).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            best.sqrt()
        })
        .collect())
}

/// Mean of the `⌈n·q⌉` largest values.
pub fn tail_mean(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(LabError::config("tail mean of an empty set"));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(LabError::config(format!("tail fraction {q} outside (0, 1]")));
    }
    let exact = values.len() as f64 * q;
    if exact < 1.0 - 1e-9 {
        return Err(LabError::config(format!(
            "tail fraction {q} selects fewer than one of {} values",
            values.len()
        )));
    }
    // Tolerance keeps products like 100·0.05 from rounding up to 6.
    let k = ((exact - 1e-9).ceil() as usize).clamp(1, values.len());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Ok(sorted[..k].iter().sum::<f64>() / k as f64)
}

/// `‖(I − QQᵀ)x‖` per row.
pub fn off_manifold_residual(q: &OrthonormalEmbedding, samples: &Tensor) -> Result<Vec<f64>> {
    let r = q.orthogonal_residual(samples)?;
    Ok((0..r.rows())
        .map(|i| r.row_slice(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect())
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len().max(1) as f64
}

/// Mean squared error over all entries.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(LabError::config("mse: shape mismatch"));
    }
    Ok(mean(
        &a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).powi(2))
            .collect::<Vec<_>>(),
    ))
}

/// `10·log10(1 / mse)`: peak signal taken as 1, the unit RMS of normalized
/// glyph coordinates.
pub fn psnr(mse: f64) -> f64 {
    -10.0 * mse.log10()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub mean: f64,
    pub max: f64,
}

impl ResidualStats {
    pub fn of(values: &[f64]) -> Self {
        ResidualStats {
            mean: mean(values),
            max: values.iter().cloned().fold(0.0, f64::max),
        }
    }
}

/// Per-run measurement against the reference set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub space: String,
    pub seed: u64,
    pub config_hash: String,
    pub reference_hash: String,
    pub samples: usize,
    pub tail_q: f64,
    pub nn_mean: f64,
    pub tail_mean: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub residual: Option<ResidualStats>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pixel_mse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub psnr: Option<f64>,
    #[serde(skip)]
    pub distances: Vec<f64>,
}

impl MetricsReport {
    /// NN and tail statistics of `points` (already in reference space).
    pub fn measure(
        space: impl Into<String>,
        seed: u64,
        config_hash: impl Into<String>,
        points: &Tensor,
        reference: &Tensor,
        tail_q: f64,
    ) -> Result<Self> {
        let distances = nn_distances(points, reference)?;
        Ok(MetricsReport {
            space: space.into(),
            seed,
            config_hash: config_hash.into(),
            reference_hash: tensor_hash(reference),
            samples: points.rows(),
            tail_q,
            nn_mean: mean(&distances),
            tail_mean: tail_mean(&distances, tail_q)?,
            residual: None,
            pixel_mse: None,
            psnr: None,
            distances,
        })
    }

    pub fn with_residuals(mut self, residuals: &[f64]) -> Self {
        self.residual = Some(ResidualStats::of(residuals));
        self
    }

    pub fn with_pixel_mse(mut self, mse: f64) -> Self {
        self.pixel_mse = Some(mse);
        self.psnr = Some(psnr(mse));
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRatio {
    pub seed: u64,
    pub tail_ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub residual_ratio: Option<f64>,
}

/// B relative to A.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceComparison {
    pub space_a: String,
    pub space_b: String,
    pub reference_hash: String,
    pub tail_mean_a: f64,
    pub tail_mean_b: f64,
    /// Ratio of seed-averaged tail means, `B / A`.
    pub tail_ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub residual_ratio: Option<f64>,
    pub per_seed: Vec<SeedRatio>,
}

/// Compare two runs (one report per seed each), paired by position.
pub fn compare_spaces(a: &[MetricsReport], b: &[MetricsReport]) -> Result<SpaceComparison> {
    if a.is_empty() || a.len() != b.len() {
        return Err(LabError::config("compare_spaces needs equally many non-empty reports"));
    }
    let hash = &a[0].reference_hash;
    if a.iter().chain(b).any(|r| &r.reference_hash != hash) {
        return Err(LabError::config(
            "reports were computed against different reference sets",
        ));
    }
    let residual_ratio = |x: &MetricsReport, y: &MetricsReport| match (x.residual, y.residual) {
        (Some(rx), Some(ry)) => Some(ry.mean / rx.mean),
        _ => None,
    };
    let per_seed = a
        .iter()
        .zip(b)
        .map(|(x, y)| SeedRatio {
            seed: y.seed,
            tail_ratio: y.tail_mean / x.tail_mean,
            residual_ratio: residual_ratio(x, y),
        })
        .collect();
    let tails = |rs: &[MetricsReport]| mean(&rs.iter().map(|r| r.tail_mean).collect::<Vec<_>>());
    let resid = |rs: &[MetricsReport]| -> Option<f64> {
        let v: Option<Vec<f64>> = rs.iter().map(|r| r.residual.map(|s| s.mean)).collect();
        v.map(|v| mean(&v))
    };
    let (ta, tb) = (tails(a), tails(b));
    Ok(SpaceComparison {
        space_a: a[0].space.clone(),
        space_b: b[0].space.clone(),
        reference_hash: hash.clone(),
        tail_mean_a: ta,
        tail_mean_b: tb,
        tail_ratio: tb / ta,
        residual_ratio: match (resid(a), resid(b)) {
            (Some(x), Some(y)) => Some(y / x),
            _ => None,
        },
        per_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_four_five() {
        let s = Tensor::row(&[3.0, 4.0]).unwrap();
        let r = Tensor::row(&[0.0, 0.0]).unwrap();
        assert_eq!(nn_distances(&s, &r).unwrap(), vec![5.0]);
    }

    #[test]
    fn identical_sets_have_zero_distance() {
        let p = Tensor::matrix(3, 2, vec![0.0, 1.0, 2.0, 3.0, -1.0, 0.5]).unwrap();
        assert!(nn_distances(&p, &p).unwrap().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn empty_or_mismatched_reference_is_rejected() {
        let s = Tensor::row(&[0.0, 0.0]).unwrap();
        assert!(nn_distances(&s, &Tensor::row(&[0.0, 0.0, 0.0]).unwrap()).is_err());
    }

    #[test]
    fn tail_examples() {
        let d: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(tail_mean(&d, 0.05).unwrap(), 98.0);
        assert_eq!(tail_mean(&d, 1.0).unwrap(), 50.5);
        assert_eq!(tail_mean(&[2.5; 40], 0.05).unwrap(), 2.5);
        assert!(tail_mean(&[], 0.05).is_err());
        assert!(tail_mean(&[1.0; 10], 0.05).is_err());
        assert!(tail_mean(&[1.0], 0.0).is_err());
    }

    #[test]
    fn residual_of_orthogonal_vector_is_its_norm() {
        let q = OrthonormalEmbedding::from_matrix(Tensor::matrix(3, 1, vec![0.0, 0.0, 1.0]).unwrap()).unwrap();
        let x = Tensor::row(&[3.0, 4.0, 0.0]).unwrap();
        assert_eq!(off_manifold_residual(&q, &x).unwrap(), vec![5.0]);
    }

    fn report(space: &str, seed: u64, tail: f64, hash: &str) -> MetricsReport {
        MetricsReport {
            space: space.into(),
            seed,
            config_hash: String::new(),
            reference_hash: hash.into(),
            samples: 1,
            tail_q: 0.05,
            nn_mean: tail / 2.0,
            tail_mean: tail,
            residual: None,
            pixel_mse: None,
            psnr: None,
            distances: vec![],
        }
    }

    #[test]
    fn comparison_ratios() {
        let a = vec![report("2d", 0, 1.0, "h"), report("2d", 1, 3.0, "h")];
        let same = compare_spaces(&a, &a).unwrap();
        assert_eq!(same.tail_ratio, 1.0);
        let b = vec![report("8d", 0, 2.0, "h"), report("8d", 1, 6.0, "h")];
        let c = compare_spaces(&a, &b).unwrap();
        assert_eq!(c.tail_ratio, 2.0);
        assert!(c.per_seed.iter().all(|s| s.tail_ratio == 2.0));
        let other = vec![report("8d", 0, 2.0, "x"), report("8d", 1, 6.0, "h")];
        assert!(compare_spaces(&a, &other).is_err());
    }

    #[test]
    fn psnr_of_unit_mse_is_zero() {
        assert_eq!(psnr(1.0), 0.0);
        assert!((psnr(0.01) - 20.0).abs() < 1e-12);
    }
}
