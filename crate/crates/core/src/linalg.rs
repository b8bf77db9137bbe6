//! Small dense helpers shared by the model fitters.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("design matrix is rank deficient (column {0})")]
    RankDeficient(usize),
    #[error("too few rows ({rows}) for {cols} columns")]
    TooFewRows { rows: usize, cols: usize },
}

/// Two-sided normal critical value `z_{(1+level)/2}`. Caller checks `0 < level < 1`.
pub fn normal_critical(level: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    n.inverse_cdf(0.5 + level / 2.0)
}

pub fn valid_level(level: f64) -> bool {
    level > 0.0 && level < 1.0
}

/// Rows/columns `idx` of a square matrix.
pub fn principal_submatrix(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |a, b| m[(idx[a], idx[b])])
}

/// Symmetric eigen-decomposition with eigenvalues floored at `floor`.
pub fn floor_eigenvalues(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    let q = &eig.eigenvectors;
    let out = q * DMatrix::from_diagonal(&vals) * q.transpose();
    (&out + out.transpose()) * 0.5
}

/// Index of the first column that is (numerically) a linear combination of earlier
/// columns, found by a pivot-free Cholesky of the scaled cross-product.
pub fn first_dependent_column(xtx: &DMatrix<f64>) -> Option<usize> {
    let p = xtx.nrows();
    let scale: Vec<f64> = (0..p).map(|i| xtx[(i, i)].sqrt()).collect();
    let mut l = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        if !(scale[i] > 0.0) {
            return Some(i);
        }
        for j in 0..=i {
            let mut sum = xtx[(i, j)] / (scale[i] * scale[j]);
            for k in 0..j {
                sum -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if sum <= 1e-10 {
                    return Some(i);
                }
                l[(i, i)] = sum.sqrt();
            } else {
                l[(i, j)] = sum / l[(j, j)];
            }
        }
    }
    None
}

#[derive(Debug, Clone)]
pub struct OlsFit {
    pub beta: DVector<f64>,
    /// `sigma2 * (X'X)^-1`
    pub vcov: DMatrix<f64>,
    /// `(X'X)^-1`
    pub xtx_inv: DMatrix<f64>,
    pub rss: f64,
    pub df: usize,
    pub sigma2: f64,
}

impl OlsFit {
    pub fn se(&self, i: usize) -> f64 {
        self.vcov[(i, i)].max(0.0).sqrt()
    }

    /// Estimate and standard error of `c'beta`.
    pub fn contrast(&self, c: &DVector<f64>) -> (f64, f64) {
        let est = c.dot(&self.beta);
        let var = (c.transpose() * &self.vcov * c)[(0, 0)];
        (est, var.max(0.0).sqrt())
    }
}

/// Ordinary least squares with the unbiased residual variance `RSS / (n - p)`.
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<OlsFit, LinalgError> {
    let (n, p) = x.shape();
    if n <= p {
        return Err(LinalgError::TooFewRows { rows: n, cols: p });
    }
    let xtx = x.tr_mul(x);
    if let Some(col) = first_dependent_column(&xtx) {
        return Err(LinalgError::RankDeficient(col));
    }
    let chol = xtx.cholesky().ok_or(LinalgError::RankDeficient(p - 1))?;
    let beta = chol.solve(&x.tr_mul(y));
    let resid = y - x * &beta;
    let rss = resid.norm_squared();
    let df = n - p;
    let sigma2 = rss / df as f64;
    let xtx_inv = chol.inverse();
    Ok(OlsFit {
        vcov: &xtx_inv * sigma2,
        xtx_inv,
        beta,
        rss,
        df,
        sigma2,
    })
}
