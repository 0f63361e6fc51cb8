use crate::error::{LabError, Result};
use crate::numeric::Tensor;
use crate::rng::{normal_vec, rng_for};

/// Linear isometry `R^l → R^h` stored as an `h × l` matrix with orthonormal
/// columns. Row-major batches: `embed` maps `n × l` to `n × h`.
#[derive(Clone, Debug, PartialEq)]
pub struct OrthonormalEmbedding {
    q: Tensor,
}

/// Tolerance on `QᵀQ = I` accepted by [`OrthonormalEmbedding::from_matrix`].
pub const ORTHO_TOL: f64 = 1e-10;

impl OrthonormalEmbedding {
    /// Orthonormalize a seeded `h × l` standard-Gaussian matrix (modified
    /// Gram-Schmidt, two passes per column).
    pub fn random(h: usize, l: usize, seed: u64) -> Result<Self> {
        if l == 0 || l >= h {
            return Err(LabError::config(format!("embedding needs 1 ≤ l < h, got h={h}, l={l}")));
        }
        let mut rng = rng_for(seed, "embedding");
        // Column-major scratch so each column is contiguous.
        let mut cols: Vec<Vec<f64>> = (0..l).map(|_| normal_vec(&mut rng, h)).collect();
        for j in 0..l {
            for _pass in 0..2 {
                for i in 0..j {
                    let (done, rest) = cols.split_at_mut(j);
                    let qi = &done[i];
                    let v = &mut rest[0];
                    let dot: f64 = qi.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
                    v.iter_mut().zip(qi).for_each(|(x, q)| *x -= dot * q);
                }
            }
            let norm = cols[j].iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-12 {
                return Err(LabError::NonFinite("degenerate Gaussian draw in embedding".into()));
            }
            cols[j].iter_mut().for_each(|x| *x /= norm);
        }
        let mut data = vec![0.0; h * l];
        for (j, col) in cols.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                data[i * l + j] = v;
            }
        }
        Ok(OrthonormalEmbedding {
            q: Tensor::matrix(h, l, data)?,
        })
    }

    /// Wrap an existing `h × l` matrix after checking orthonormality.
    pub fn from_matrix(q: Tensor) -> Result<Self> {
        if q.shape().len() != 2 || q.cols() > q.rows() {
            return Err(LabError::config(format!(
                "embedding matrix must be h×l with l ≤ h, got {:?}",
                q.shape()
            )));
        }
        let e = OrthonormalEmbedding { q };
        let err = e.orthonormality_error();
        if err > ORTHO_TOL {
            return Err(LabError::config(format!(
                "columns are not orthonormal (max |QᵀQ − I| = {err:e})"
            )));
        }
        Ok(e)
    }

    /// `Q = I_h`; the "ambient equals intrinsic" case.
    pub fn identity(h: usize) -> Self {
        OrthonormalEmbedding { q: Tensor::identity(h) }
    }

    pub fn ambient_dim(&self) -> usize {
        self.q.rows()
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.q.cols()
    }

    pub fn matrix(&self) -> &Tensor {
        &self.q
    }

    /// `max |QᵀQ − I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.q.transpose().matmul(&self.q).expect("square Gram matrix");
        let l = g.rows();
        (0..l)
            .flat_map(|i| (0..l).map(move |j| (i, j)))
            .map(|(i, j)| (g.get(i, j) - if i == j { 1.0 } else { 0.0 }).abs())
            .fold(0.0, f64::max)
    }

    /// `x = Qz` for each row `z`.
    pub fn embed(&self, z: &Tensor) -> Result<Tensor> {
        if z.cols() != self.intrinsic_dim() {
            return Err(LabError::config(format!(
                "embed expects width {}, got {}",
                self.intrinsic_dim(),
                z.cols()
            )));
        }
        z.matmul(&self.q.transpose())
    }

    /// `z = Qᵀx` for each row `x`.
    pub fn project(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.ambient_dim() {
            return Err(LabError::config(format!(
                "project expects width {}, got {}",
                self.ambient_dim(),
                x.cols()
            )));
        }
        x.matmul(&self.q)
    }

    /// `(I − QQᵀ)x` for each row.
    pub fn orthogonal_residual(&self, x: &Tensor) -> Result<Tensor> {
        let back = self.embed(&self.project(x)?)?;
        let data = x.data().iter().zip(back.data()).map(|(a, b)| a - b).collect();
        Tensor::matrix(x.rows(), x.cols(), data)
    }
}

/// `make_embedding(h, l, seed)`.
pub fn make_embedding(h: usize, l: usize, seed: u64) -> Result<OrthonormalEmbedding> {
    OrthonormalEmbedding::random(h, l, seed)
}
