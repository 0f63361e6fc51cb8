//! The ground-truth "PS" distribution: uniform over the occupied cells of a
//! built-in bitmap, jittered uniformly inside each cell, then normalized to
//! zero mean and unit RMS.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::numeric::Tensor;
use crate::rng::{rng_for, LabRng};

/// Built-in 256×128 bitmap, binary PBM (`P4`).
pub const BUILTIN_PBM: &[u8] = include_bytes!("../../assets/ps_glyph.pbm");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Letter {
    P,
    S,
}

impl Letter {
    pub fn index(self) -> usize {
        match self {
            Letter::P => 0,
            Letter::S => 1,
        }
    }
}

/// Boolean raster, row 0 at the top.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlyphMask {
    width: usize,
    height: usize,
    cells: Vec<bool>,
}

fn pbm_tokens(bytes: &[u8]) -> (Vec<String>, usize) {
    // Header tokens (magic, width, height) with `#` comments; returns the
    // byte offset just past the single whitespace that ends the header.
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < 3 && i < bytes.len() {
        match bytes[i] {
            b'#' => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            b if b.is_ascii_whitespace() => i += 1,
            _ => {
                let start = i;
                while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
                    i += 1;
                }
                tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
            }
        }
    }
    (tokens, i + 1)
}

impl GlyphMask {
    pub fn new(width: usize, height: usize, cells: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || cells.len() != width * height {
            return Err(LabError::config("mask dimensions do not match cell count"));
        }
        Ok(GlyphMask { width, height, cells })
    }

    /// Parse a plain (`P1`) or raw (`P4`) portable bitmap.
    pub fn from_pbm(bytes: &[u8]) -> Result<Self> {
        let (tokens, body) = pbm_tokens(bytes);
        if tokens.len() < 3 {
            return Err(LabError::config("truncated PBM header"));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| LabError::config(format!("bad PBM dimension `{s}`")))
        };
        let (w, h) = (parse(&tokens[1])?, parse(&tokens[2])?);
        let mut cells = Vec::with_capacity(w * h);
        match tokens[0].as_str() {
            "P4" => {
                let stride = w.div_ceil(8);
                let data = bytes
                    .get(body..body + stride * h)
                    .ok_or_else(|| LabError::config("truncated PBM raster"))?;
                for r in 0..h {
                    for c in 0..w {
                        cells.push(data[r * stride + c / 8] & (0x80 >> (c % 8)) != 0);
                    }
                }
            }
            "P1" => {
                let mut rest = &bytes[body.min(bytes.len())..];
                while cells.len() < w * h {
                    let (&b, tail) = rest
                        .split_first()
                        .ok_or_else(|| LabError::config("truncated PBM raster"))?;
                    rest = tail;
                    match b {
                        b'0' => cells.push(false),
                        b'1' => cells.push(true),
                        b'#' => {
                            let skip = rest.iter().position(|&c| c == b'\n').unwrap_or(rest.len());
                            rest = &rest[skip..];
                        }
                        _ => {}
                    }
                }
            }
            other => return Err(LabError::config(format!("unsupported PBM magic `{other}`"))),
        }
        GlyphMask::new(w, h, cells)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn occupied(&self, col: usize, row: usize) -> bool {
        self.cells[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }
}

/// Points and their letter labels.
#[derive(Clone, Debug)]
pub struct GlyphSample {
    pub points: Tensor,
    pub labels: Vec<Letter>,
}

/// Sampler for the normalized glyph distribution.
///
/// Cells in the left half of the raster belong to `P`, the rest to `S`.
#[derive(Clone, Debug)]
pub struct GlyphDistribution {
    mask: GlyphMask,
    cells: Vec<(usize, usize)>,
    labels: Vec<Letter>,
    center: [f64; 2],
    scale: f64,
}

impl GlyphDistribution {
    pub fn builtin() -> Result<Self> {
        GlyphDistribution::from_mask(GlyphMask::from_pbm(BUILTIN_PBM)?)
    }

    pub fn from_mask(mask: GlyphMask) -> Result<Self> {
        let mut cells = Vec::new();
        let mut labels = Vec::new();
        for row in 0..mask.height {
            for col in 0..mask.width {
                if mask.occupied(col, row) {
                    cells.push((col, row));
                    labels.push(if col < mask.width / 2 { Letter::P } else { Letter::S });
                }
            }
        }
        for letter in [Letter::P, Letter::S] {
            if !labels.contains(&letter) {
                return Err(LabError::config(format!(
                    "glyph mask has no cell for letter {letter:?}"
                )));
            }
        }
        // Plane coordinates: u = column, v = height − row (y up). A uniform
        // point inside a cell has the cell-centre mean and 1/12 extra variance
        // per axis.
        let n = cells.len() as f64;
        let h = mask.height as f64;
        let centre = |&(c, r): &(usize, usize)| (c as f64 + 0.5, h - r as f64 - 0.5);
        let (mut su, mut sv) = (0.0, 0.0);
        for cell in &cells {
            let (u, v) = centre(cell);
            su += u;
            sv += v;
        }
        let center = [su / n, sv / n];
        let mut ss = 0.0;
        for cell in &cells {
            let (u, v) = centre(cell);
            ss += (u - center[0]).powi(2) + (v - center[1]).powi(2) + 2.0 / 12.0;
        }
        let scale = (ss / (2.0 * n)).sqrt();
        Ok(GlyphDistribution {
            mask,
            cells,
            labels,
            center,
            scale,
        })
    }

    pub fn mask(&self) -> &GlyphMask {
        &self.mask
    }

    /// Fraction of occupied cells (= probability mass) belonging to `letter`.
    pub fn area_fraction(&self, letter: Letter) -> f64 {
        self.labels.iter().filter(|&&l| l == letter).count() as f64 / self.labels.len() as f64
    }

    /// Raster units per normalized unit.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn sample_with(&self, n: usize, rng: &mut LabRng) -> Result<GlyphSample> {
        if n == 0 {
            return Err(LabError::config("sample count must be ≥ 1"));
        }
        let h = self.mask.height as f64;
        let mut data = Vec::with_capacity(2 * n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let k = rng.random_range(0..self.cells.len());
            let (col, row) = self.cells[k];
            let u = col as f64 + rng.random::<f64>();
            let v = h - row as f64 - rng.random::<f64>();
            data.push((u - self.center[0]) / self.scale);
            data.push((v - self.center[1]) / self.scale);
            labels.push(self.labels[k]);
        }
        Ok(GlyphSample {
            points: Tensor::matrix(n, 2, data)?,
            labels,
        })
    }

    /// `sample_glyph(n, seed)`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<GlyphSample> {
        self.sample_with(n, &mut rng_for(seed, "glyph"))
    }

    /// Map a normalized point back to continuous raster coordinates
    /// `(column, row)`.
    pub fn to_raster(&self, p: [f64; 2]) -> (f64, f64) {
        let u = p[0] * self.scale + self.center[0];
        let v = p[1] * self.scale + self.center[1];
        (u, self.mask.height as f64 - v)
    }

    /// Whether `p` falls in the mask dilated by one cell (8-neighbourhood).
    pub fn in_dilated_mask(&self, p: [f64; 2]) -> bool {
        let (c, r) = self.to_raster(p);
        let (c, r) = (c.floor() as i64, r.floor() as i64);
        (-1..=1).any(|dr| {
            (-1..=1).any(|dc| {
                let (cc, rr) = (c + dc, r + dr);
                cc >= 0
                    && rr >= 0
                    && (cc as usize) < self.mask.width
                    && (rr as usize) < self.mask.height
                    && self.mask.occupied(cc as usize, rr as usize)
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_mask_parses_with_both_letters() {
        let g = GlyphDistribution::builtin().unwrap();
        assert_eq!((g.mask().width(), g.mask().height()), (256, 128));
        let p = g.area_fraction(Letter::P);
        assert!(p > 0.3 && p < 0.7, "{p}");
    }

    #[test]
    fn plain_and_raw_pbm_agree() {
        let raw = b"P4\n10 2\n\xff\xc0\x00\x40";
        let plain = b"P1\n# comment\n10 2\n1111111111\n0000000001\n";
        assert_eq!(GlyphMask::from_pbm(raw).unwrap(), GlyphMask::from_pbm(plain).unwrap());
    }

    #[test]
    fn empty_letter_is_rejected() {
        let mut cells = vec![false; 8 * 4];
        cells[1] = true; // left half only
        let err = GlyphDistribution::from_mask(GlyphMask::new(8, 4, cells).unwrap());
        assert!(matches!(err, Err(LabError::Config(_))));
    }

    #[test]
    fn samples_stay_inside_dilated_mask() {
        let g = GlyphDistribution::builtin().unwrap();
        let s = g.sample(10_000, 5).unwrap();
        for i in 0..s.points.rows() {
            let p = s.points.row_slice(i);
            assert!(g.in_dilated_mask([p[0], p[1]]));
        }
    }

    #[test]
    fn normalization_moments() {
        let g = GlyphDistribution::builtin().unwrap();
        let s = g.sample(10_000, 6).unwrap();
        let n = s.points.rows() as f64;
        let mut mean = [0.0; 2];
        let mut ss = 0.0;
        for i in 0..s.points.rows() {
            let p = s.points.row_slice(i);
            mean[0] += p[0] / n;
            mean[1] += p[1] / n;
            ss += p[0] * p[0] + p[1] * p[1];
        }
        assert!(mean[0].abs() <= 0.05 && mean[1].abs() <= 0.05, "{mean:?}");
        let rms = (ss / (2.0 * n)).sqrt();
        assert!((rms - 1.0).abs() <= 0.05, "{rms}");
    }

    #[test]
    fn letter_fraction_within_three_sigma() {
        let g = GlyphDistribution::builtin().unwrap();
        let n = 10_000;
        let s = g.sample(n, 7).unwrap();
        let p = g.area_fraction(Letter::P);
        let got = s.labels.iter().filter(|&&l| l == Letter::P).count() as f64 / n as f64;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((got - p).abs() <= 3.0 * sigma, "{got} vs {p}");
    }

    #[test]
    fn letter_fraction_stable_across_seeds() {
        let g = GlyphDistribution::builtin().unwrap();
        let fracs: Vec<f64> = (0..10)
            .map(|seed| {
                let s = g.sample(100_000, seed).unwrap();
                s.labels.iter().filter(|&&l| l == Letter::P).count() as f64 / 1e5
            })
            .collect();
        let lo = fracs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = fracs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(hi - lo <= 0.02, "{fracs:?}");
    }
}
