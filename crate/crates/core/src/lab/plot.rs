use std::fmt::Write as _;
use std::path::Path;

use crate::error::{LabError, Result};
use crate::lab::io::read_points_csv;
use crate::numeric::Tensor;

const SIZE: f64 = 640.0;
const MARGIN: f64 = 0.1;

/// Scatter overlay of `samples` on `reference`, both `n × 2`.
///
/// The viewport is the reference bounding box padded by 10% per side, so
/// the output depends only on the two point lists.
pub fn scatter_svg(samples: &Tensor, reference: &Tensor) -> Result<String> {
    for (name, t) in [("samples", samples), ("reference", reference)] {
        if t.shape().len() != 2 || t.cols() != 2 {
            return Err(LabError::config(format!(
                "{name} must be 2-D points, got shape {:?}",
                t.shape()
            )));
        }
    }
    if reference.rows() == 0 {
        return Err(LabError::config("reference set is empty"));
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for i in 0..reference.rows() {
        for (j, &v) in reference.row_slice(i).iter().enumerate() {
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    for j in 0..2 {
        let span = if hi[j] > lo[j] { hi[j] - lo[j] } else { 1.0 };
        lo[j] -= MARGIN * span;
        hi[j] += MARGIN * span;
    }
    let px = |p: &[f64]| {
        (
            (p[0] - lo[0]) / (hi[0] - lo[0]) * SIZE,
            (hi[1] - p[1]) / (hi[1] - lo[1]) * SIZE,
        )
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (id, color, pts) in [("reference", "#8a96a3", reference), ("samples", "#d1495b", samples)] {
        let _ = writeln!(svg, r#"<g id="{id}" fill="{color}" fill-opacity="0.6">"#);
        for i in 0..pts.rows() {
            let (x, y) = px(pts.row_slice(i));
            if x.is_finite() && y.is_finite() {
                let _ = writeln!(svg, r#"<circle cx="{x:.2}" cy="{y:.2}" r="1.2"/>"#);
            }
        }
        svg.push_str("</g>\n");
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// `plot <samples.csv> <reference.csv> <out.svg>`.
pub fn plot_files(samples: &Path, reference: &Path, out: &Path) -> Result<()> {
    let svg = scatter_svg(&read_points_csv(samples)?, &read_points_csv(reference)?)?;
    std::fs::write(out, svg).map_err(|e| LabError::io(out, e))
}
