use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};
use crate::manifold::Letter;
use crate::numeric::Tensor;

const ITERATIONS: usize = 500;
const STEP: f64 = 0.5;
const RIDGE: f64 = 1e-4;

/// Rows whose content hash falls in the last fifth go to the test split, so
/// duplicated points always land on the same side.
fn is_test_row(row: &[f64]) -> bool {
    let mut h = Sha256::new();
    for v in row {
        h.update(v.to_le_bytes());
    }
    h.finalize()[0] % 5 == 0
}

/// Held-out accuracy of a logistic P-vs-S classifier on standardized codes.
///
/// Training is full-batch gradient descent with a small ridge penalty, so the
/// result is a pure function of the inputs.
pub fn semantic_probe(codes: &Tensor, labels: &[Letter]) -> Result<f64> {
    if codes.rows() != labels.len() {
        return Err(LabError::config("one label per code row required"));
    }
    if !labels.contains(&Letter::P) || !labels.contains(&Letter::S) {
        return Err(LabError::config("semantic probe needs both letters present"));
    }
    let (train, test): (Vec<usize>, Vec<usize>) = (0..codes.rows()).partition(|&i| !is_test_row(codes.row_slice(i)));
    if train.is_empty() || test.is_empty() {
        return Err(LabError::config("semantic probe split left one side empty"));
    }
    let d = codes.cols();
    let n = train.len() as f64;
    let mut mean = vec![0.0; d];
    let mut sd = vec![0.0; d];
    for &i in &train {
        codes.row_slice(i).iter().zip(&mut mean).for_each(|(v, m)| *m += v / n);
    }
    for &i in &train {
        for (j, v) in codes.row_slice(i).iter().enumerate() {
            sd[j] += (v - mean[j]).powi(2) / n;
        }
    }
    sd.iter_mut().for_each(|s| *s = if *s > 0.0 { s.sqrt() } else { 1.0 });
    let standardize = |i: usize| -> Vec<f64> {
        codes
            .row_slice(i)
            .iter()
            .enumerate()
            .map(|(j, v)| (v - mean[j]) / sd[j])
            .collect()
    };
    let xs: Vec<Vec<f64>> = train.iter().map(|&i| standardize(i)).collect();
    let ys: Vec<f64> = train.iter().map(|&i| (labels[i] == Letter::S) as u8 as f64).collect();

    let mut w = vec![0.0; d];
    let mut b = 0.0;
    for _ in 0..ITERATIONS {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (x, y) in xs.iter().zip(&ys) {
            let z = b + x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            let r = crate::flow::sigmoid(z) - y;
            gb += r;
            gw.iter_mut().zip(x).for_each(|(g, xi)| *g += r * xi);
        }
        for (wj, gj) in w.iter_mut().zip(&gw) {
            *wj -= STEP * (gj / n + RIDGE * *wj);
        }
        b -= STEP * gb / n;
    }

    let correct = test
        .iter()
        .filter(|&&i| {
            let x = standardize(i);
            let z = b + x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            (z > 0.0) == (labels[i] == Letter::S)
        })
        .count();
    Ok(correct as f64 / test.len() as f64)
}
