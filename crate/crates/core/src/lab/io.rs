//! Fixed CSV dialect (comma, header row, `.` decimal, LF) and JSON output.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{LabError, Result};
use crate::numeric::Tensor;

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| LabError::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

/// Write rows of `points` under the header `x0,x1,…`.
pub fn write_points_csv(path: &Path, points: &Tensor) -> Result<()> {
    let mut w = writer(path)?;
    let cols = if points.shape().len() == 2 { points.cols() } else { 0 };
    w.write_record((0..cols).map(|j| format!("x{j}")))?;
    for i in 0..points.rows() {
        w.write_record(points.row_slice(i).iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

/// Read a points CSV written by [`write_points_csv`]; any header names are
/// accepted, the header only fixes the column count.
pub fn read_points_csv(path: &Path) -> Result<Tensor> {
    let file = fs::File::open(path).map_err(|e| LabError::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let cols = r.headers()?.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        for field in rec.iter() {
            let v: f64 = field.trim().parse().map_err(|_| {
                LabError::config(format!(
                    "{}: row {} has non-numeric value `{field}`",
                    path.display(),
                    i + 1
                ))
            })?;
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Ok(Tensor::zeros(&[0, cols]));
    }
    Tensor::matrix(rows, cols, data)
}

/// Write any serializable table with a header row.
pub fn write_rows_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = writer(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| LabError::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| LabError::io(path, e))
}
