//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every op evaluates eagerly and appends a node; [`Tape::backward`] walks the
//! nodes in reverse insertion order (a valid reverse topological order by
//! construction) and accumulates vector-Jacobian products.

use std::collections::HashMap;

use crate::error::{LabError, Result};
use crate::numeric::tensor::{gemm, Mat};
use crate::numeric::{ParamId, ParamSet, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Linear(Var, Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Silu(Var),
    Relu(Var),
    Exp(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    ConcatCols(Var, Var),
    SliceCols(Var, usize),
    Sum(Var),
    Mean(Var),
    Mse(Var, Var),
    Cosine(Var, Var),
    Kl(Var, Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    skipped_cosine_rows: usize,
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Write parameter gradients into `params`. Parameters that were on the
    /// tape but received no gradient flow get an explicit zero.
    pub fn write_to(&self, params: &mut ParamSet) {
        for &(id, var) in &self.params {
            match self.get(var) {
                Some(g) => params.set_grad(id, g.clone()),
                None => params.set_zero_grad(id),
            }
        }
    }
}

fn check_same(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(LabError::config(format!(
            "{what}: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )))
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// `x · w + b` with `b` broadcast over rows. Shared by the tape and the
/// tape-free inference path so both produce bit-identical results.
pub(crate) fn linear_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = (x.rows(), x.cols());
    if w.rows() != k || b.len() != w.cols() {
        return Err(LabError::config(format!(
            "linear layer expects input width {} (bias {}), got {:?}",
            w.rows(),
            b.len(),
            x.shape()
        )));
    }
    let n = w.cols();
    let mut out = Vec::with_capacity(m * n);
    for _ in 0..m {
        out.extend_from_slice(b.data());
    }
    gemm(
        Mat::new(x.data(), m, k, false),
        Mat::new(w.data(), k, n, false),
        &mut out,
        1.0,
    );
    Tensor::matrix(m, n, out)
}

pub(crate) fn concat_cols(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rows() != b.rows() {
        return Err(LabError::config(format!(
            "concat: row counts differ ({} vs {})",
            a.rows(),
            b.rows()
        )));
    }
    let (ca, cb) = (a.cols(), b.cols());
    let mut out = Vec::with_capacity(a.rows() * (ca + cb));
    for i in 0..a.rows() {
        out.extend_from_slice(a.row_slice(i));
        out.extend_from_slice(b.row_slice(i));
    }
    Tensor::matrix(a.rows(), ca + cb, out)
}

fn col_sum(g: &Tensor) -> Vec<f64> {
    let mut acc = vec![0.0; g.cols()];
    for i in 0..g.rows() {
        for (a, v) in acc.iter_mut().zip(g.row_slice(i)) {
            *a += v;
        }
    }
    acc
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(existing) => {
            for (e, v) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += v;
            }
        }
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A differentiable leaf not tied to any parameter set.
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Trainable parameter leaf; repeated requests return the same node.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(params.value(id).clone(), Op::Param, true);
        self.params.insert(id, v);
        v
    }

    /// Copy of `v` cut off from the gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    /// Affine map `x · w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = linear_forward(self.value(x), self.value(w), self.value(b))?;
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(out, Op::Linear(x, w, b), ng))
    }

    /// Add a row vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.len() != xv.cols() {
            return Err(LabError::config("add_row: width mismatch"));
        }
        let c = xv.cols();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + rv.data()[i % c])
            .collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let ng = self.needs(x) || self.needs(row);
        Ok(self.push(out, Op::AddRow(x, row), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same(self.value(a), self.value(b), "add")?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same(self.value(a), self.value(b), "sub")?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same(self.value(a), self.value(b), "mul")?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x + s);
        let ng = self.needs(a);
        self.push(out, Op::AddScalar(a), ng)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(silu);
        let ng = self.needs(a);
        self.push(out, Op::Silu(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        let ng = self.needs(a);
        self.push(out, Op::Relu(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        let ng = self.needs(a);
        self.push(out, Op::Exp(a), ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        let ng = self.needs(a);
        self.push(out, Op::Square(a), ng)
    }

    /// Clamp into `[lo, hi]`; gradient passes only where the input is inside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        let ng = self.needs(a);
        self.push(out, Op::Clamp(a, lo, hi), ng)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = concat_cols(self.value(a), self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::ConcatCols(a, b), ng))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let cols: Vec<usize> = (start..end).collect();
        let out = self.value(a).select_cols(&cols)?;
        let ng = self.needs(a);
        Ok(self.push(out, Op::SliceCols(a, start), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let ng = self.needs(a);
        self.push(Tensor::scalar(s), Op::Mean(a), ng)
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        check_same(p, t, "mse")?;
        let s = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / p.len() as f64;
        let ng = self.needs(pred) || self.needs(target);
        Ok(self.push(Tensor::scalar(s), Op::Mse(pred, target), ng))
    }

    /// Row-averaged `1 − cos(pred_i, target_i)`. Rows whose target has zero
    /// norm are skipped and counted in [`Tape::skipped_cosine_rows`].
    pub fn cosine_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        check_same(p, t, "cosine")?;
        let mut total = 0.0;
        let mut valid = 0usize;
        for i in 0..p.rows() {
            let (a, b) = (p.row_slice(i), t.row_slice(i));
            let nb = dot(b, b).sqrt();
            if nb == 0.0 {
                continue;
            }
            let na = dot(a, a).sqrt().max(f64::MIN_POSITIVE);
            total += 1.0 - dot(a, b) / (na * nb);
            valid += 1;
        }
        let skipped = p.rows() - valid;
        let loss = if valid == 0 { 0.0 } else { total / valid as f64 };
        self.skipped_cosine_rows += skipped;
        let ng = self.needs(pred) || self.needs(target);
        Ok(self.push(Tensor::scalar(loss), Op::Cosine(pred, target), ng))
    }

    /// Rows skipped by [`Tape::cosine_loss`] because of zero-norm targets.
    pub fn skipped_cosine_rows(&self) -> usize {
        self.skipped_cosine_rows
    }

    /// KL divergence of diagonal Gaussians from the standard normal, summed
    /// over latent dims and averaged over rows.
    pub fn kl_std_normal(&mut self, mu: Var, logvar: Var) -> Result<Var> {
        let (m, lv) = (self.value(mu), self.value(logvar));
        check_same(m, lv, "kl")?;
        let s: f64 = m
            .data()
            .iter()
            .zip(lv.data())
            .map(|(u, l)| 0.5 * (u * u + l.exp() - 1.0 - l))
            .sum();
        let out = s / m.rows() as f64;
        let ng = self.needs(mu) || self.needs(logvar);
        Ok(self.push(Tensor::scalar(out), Op::Kl(mu, logvar), ng))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(LabError::config(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }

        let mut params: Vec<(ParamId, Var)> = self.params.iter().map(|(&p, &v)| (p, v)).collect();
        params.sort_by_key(|&(p, _)| p);
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        let send = |v: Var, t: Tensor, grads: &mut [Option<Tensor>]| {
            if self.nodes[v.0].needs_grad {
                accumulate(&mut grads[v.0], t);
            }
        };
        match node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(a), val(b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.needs(a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(
                        Mat::new(g.data(), m, n, false),
                        Mat::new(bv.data(), k, n, true),
                        &mut ga,
                        0.0,
                    );
                    send(a, Tensor::new(av.shape().to_vec(), ga)?, grads);
                }
                if self.needs(b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(
                        Mat::new(av.data(), m, k, true),
                        Mat::new(g.data(), m, n, false),
                        &mut gb,
                        0.0,
                    );
                    send(b, Tensor::new(bv.shape().to_vec(), gb)?, grads);
                }
            }
            Op::Linear(x, w, b) => {
                let (xv, wv) = (val(x), val(w));
                let (m, k, n) = (xv.rows(), xv.cols(), wv.cols());
                if self.needs(x) {
                    let mut gx = vec![0.0; m * k];
                    gemm(
                        Mat::new(g.data(), m, n, false),
                        Mat::new(wv.data(), k, n, true),
                        &mut gx,
                        0.0,
                    );
                    send(x, Tensor::new(xv.shape().to_vec(), gx)?, grads);
                }
                if self.needs(w) {
                    let mut gw = vec![0.0; k * n];
                    gemm(
                        Mat::new(xv.data(), m, k, true),
                        Mat::new(g.data(), m, n, false),
                        &mut gw,
                        0.0,
                    );
                    send(w, Tensor::new(wv.shape().to_vec(), gw)?, grads);
                }
                if self.needs(b) {
                    send(b, Tensor::new(val(b).shape().to_vec(), col_sum(g))?, grads);
                }
            }
            Op::AddRow(x, row) => {
                send(x, g.clone(), grads);
                if self.needs(row) {
                    send(row, Tensor::new(val(row).shape().to_vec(), col_sum(g))?, grads);
                }
            }
            Op::Add(a, b) => {
                send(a, g.clone(), grads);
                send(b, g.clone(), grads);
            }
            Op::Sub(a, b) => {
                send(a, g.clone(), grads);
                send(b, g.map(|v| -v), grads);
            }
            Op::Mul(a, b) => {
                if self.needs(a) {
                    send(a, zip_map(g, val(b), |x, y| x * y), grads);
                }
                if self.needs(b) {
                    send(b, zip_map(g, val(a), |x, y| x * y), grads);
                }
            }
            Op::Scale(a, s) => send(a, g.map(|v| v * s), grads),
            Op::AddScalar(a) => send(a, g.clone(), grads),
            Op::Silu(a) => send(a, zip_map(g, val(a), |gv, x| gv * silu_grad(x)), grads),
            Op::Relu(a) => send(a, zip_map(g, val(a), |gv, x| if x > 0.0 { gv } else { 0.0 }), grads),
            Op::Exp(a) => send(a, zip_map(g, &node.value, |gv, y| gv * y), grads),
            Op::Square(a) => send(a, zip_map(g, val(a), |gv, x| 2.0 * x * gv), grads),
            Op::Clamp(a, lo, hi) => send(
                a,
                zip_map(g, val(a), |gv, x| if (lo..=hi).contains(&x) { gv } else { 0.0 }),
                grads,
            ),
            Op::ConcatCols(a, b) => {
                let (ca, cb) = (val(a).cols(), val(b).cols());
                let rows = g.rows();
                if self.needs(a) {
                    let mut ga = Vec::with_capacity(rows * ca);
                    for i in 0..rows {
                        ga.extend_from_slice(&g.row_slice(i)[..ca]);
                    }
                    send(a, Tensor::new(val(a).shape().to_vec(), ga)?, grads);
                }
                if self.needs(b) {
                    let mut gb = Vec::with_capacity(rows * cb);
                    for i in 0..rows {
                        gb.extend_from_slice(&g.row_slice(i)[ca..]);
                    }
                    send(b, Tensor::new(val(b).shape().to_vec(), gb)?, grads);
                }
            }
            Op::SliceCols(a, start) => {
                let av = val(a);
                let mut ga = Tensor::zeros(av.shape());
                let w = g.cols();
                for i in 0..g.rows() {
                    ga.row_slice_mut(i)[start..start + w].copy_from_slice(g.row_slice(i));
                }
                send(a, ga, grads);
            }
            Op::Sum(a) => send(a, Tensor::full(val(a).shape(), g.data()[0]), grads),
            Op::Mean(a) => {
                let n = val(a).len() as f64;
                send(a, Tensor::full(val(a).shape(), g.data()[0] / n), grads);
            }
            Op::Mse(p, t) => {
                let (pv, tv) = (val(p), val(t));
                let c = 2.0 * g.data()[0] / pv.len() as f64;
                let diff = zip_map(pv, tv, |x, y| c * (x - y));
                if self.needs(t) {
                    send(t, diff.map(|v| -v), grads);
                }
                send(p, diff, grads);
            }
            Op::Cosine(p, t) => {
                let (pv, tv) = (val(p), val(t));
                let valid = (0..pv.rows())
                    .filter(|&i| dot(tv.row_slice(i), tv.row_slice(i)) > 0.0)
                    .count();
                if valid == 0 {
                    return Ok(());
                }
                let scale = -g.data()[0] / valid as f64;
                let mut gp = Tensor::zeros(pv.shape());
                let mut gt = Tensor::zeros(tv.shape());
                for i in 0..pv.rows() {
                    let (a, b) = (pv.row_slice(i), tv.row_slice(i));
                    let nb = dot(b, b).sqrt();
                    if nb == 0.0 {
                        continue;
                    }
                    let na = dot(a, a).sqrt().max(f64::MIN_POSITIVE);
                    let cos = dot(a, b) / (na * nb);
                    // d cos / d a = b/(|a||b|) − cos·a/|a|², symmetric in b.
                    for (j, gpj) in gp.row_slice_mut(i).iter_mut().enumerate() {
                        *gpj = scale * (b[j] / (na * nb) - cos * a[j] / (na * na));
                    }
                    for (j, gtj) in gt.row_slice_mut(i).iter_mut().enumerate() {
                        *gtj = scale * (a[j] / (na * nb) - cos * b[j] / (nb * nb));
                    }
                }
                send(p, gp, grads);
                send(t, gt, grads);
            }
            Op::Kl(mu, lv) => {
                let rows = val(mu).rows() as f64;
                let c = g.data()[0] / rows;
                send(mu, val(mu).map(|u| c * u), grads);
                send(lv, val(lv).map(|l| 0.5 * c * (l.exp() - 1.0)), grads);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_gradient_of_scaled_input() {
        let mut tape = Tape::new();
        let w = tape.variable(Tensor::scalar(0.7));
        let x = tape.constant(Tensor::scalar(3.0));
        let y = tape.mul(w, x).unwrap();
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[3.0]);
        assert!(g.get(x).is_none());
    }

    #[test]
    fn relu_matches_identity_on_positive_preactivations() {
        let w = Tensor::matrix(2, 3, vec![0.5, 1.0, 0.2, 0.3, 0.1, 0.9]).unwrap();
        let x = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        let run = |relu: bool| {
            let mut tape = Tape::new();
            let wv = tape.variable(w.clone());
            let xv = tape.constant(x.clone());
            let mut h = tape.matmul(xv, wv).unwrap();
            if relu {
                h = tape.relu(h);
            }
            let loss = tape.sum(h);
            tape.backward(loss).unwrap().get(wv).unwrap().clone()
        };
        assert_eq!(run(true), run(false));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let v = tape.variable(Tensor::zeros(&[2, 2]));
        assert!(matches!(tape.backward(v), Err(LabError::Config(_))));
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut tape = Tape::new();
        let a = tape.variable(Tensor::scalar(2.0));
        let b = tape.square(a);
        let c = tape.detach(b);
        let d = tape.add(b, c).unwrap();
        let g = tape.backward(d).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[4.0]);
    }

    #[test]
    fn cosine_skips_zero_targets() {
        let mut tape = Tape::new();
        let p = tape.variable(Tensor::matrix(2, 2, vec![1.0, 0.0, 1.0, 1.0]).unwrap());
        let t = tape.constant(Tensor::matrix(2, 2, vec![0.0, 1.0, 0.0, 0.0]).unwrap());
        let l = tape.cosine_loss(p, t).unwrap();
        assert_eq!(tape.scalar(l), 1.0);
        assert_eq!(tape.skipped_cosine_rows(), 1);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(p).unwrap().row_slice(1), &[0.0, 0.0]);
    }
}
