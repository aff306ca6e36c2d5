//! Thin wrappers over `faer` for the dense symmetric problems in the simulator.

use faer::linalg::solvers::{Llt, Solve};
use faer::{Mat, Side};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not numerically positive definite, even after jitter {0:e}")]
    NotPositiveDefinite(f64),
    #[error("symmetric eigendecomposition failed")]
    Eigen,
    #[error("dimension mismatch: {0}")]
    Shape(String),
}

/// Cholesky factor of `A + shift·I`, reusable across right-hand sides.
pub struct ShiftedCholesky {
    shifted: Mat<f64>,
    llt: Llt<f64>,
    /// Extra diagonal added because the first factorization failed; 0 if none.
    pub jitter: f64,
}

impl ShiftedCholesky {
    /// Factors `a + shift·I`, retrying once with `jitter` added on failure.
    pub fn new(a: &Mat<f64>, shift: f64, jitter: f64) -> Result<Self, LinalgError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(LinalgError::Shape(format!("{}x{} is not square", n, a.ncols())));
        }
        let mut shifted = a.clone();
        for i in 0..n {
            shifted[(i, i)] += shift;
        }
        if let Ok(llt) = shifted.llt(Side::Lower) {
            return Ok(ShiftedCholesky { shifted, llt, jitter: 0.0 });
        }
        for i in 0..n {
            shifted[(i, i)] += jitter;
        }
        match shifted.llt(Side::Lower) {
            Ok(llt) => {
                log::warn!("factorization needed jitter {jitter:e}");
                Ok(ShiftedCholesky { shifted, llt, jitter })
            }
            Err(_) => Err(LinalgError::NotPositiveDefinite(jitter)),
        }
    }

    pub fn dim(&self) -> usize {
        self.shifted.nrows()
    }

    /// Solves with one step of iterative refinement. Returns the solution and
    /// the relative residual `‖b − Ax‖ / ‖b‖` (0 for `b = 0`).
    pub fn solve(&self, b: &[f64]) -> (Vec<f64>, f64) {
        let n = self.dim();
        let rhs = Mat::from_fn(n, 1, |i, _| b[i]);
        let mut x = self.llt.solve(&rhs);
        let r = &rhs - &self.shifted * &x;
        let dx = self.llt.solve(&r);
        x += &dx;
        let resid = &rhs - &self.shifted * &x;
        let b_norm = rhs.norm_l2();
        let rel = if b_norm == 0.0 { 0.0 } else { resid.norm_l2() / b_norm };
        (x.col_as_slice(0).to_vec(), rel)
    }

    /// `(A + shift·I)^{-1}`.
    pub fn inverse(&self) -> Mat<f64> {
        self.llt.solve(Mat::<f64>::identity(self.dim(), self.dim()))
    }
}

/// `A = U diag(values) Uᵀ` with eigenvalues ascending.
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Mat<f64>,
}

pub fn sym_eigen(a: &Mat<f64>) -> Result<SymEigen, LinalgError> {
    let evd = a.self_adjoint_eigen(Side::Lower).map_err(|_| LinalgError::Eigen)?;
    let values = (0..a.nrows()).map(|i| evd.S()[i]).collect();
    Ok(SymEigen { values, vectors: evd.U().to_owned() })
}

pub fn mat_vec(a: &Mat<f64>, x: &[f64]) -> Vec<f64> {
    let xm = Mat::from_fn(x.len(), 1, |i, _| x[i]);
    (a * &xm).col_as_slice(0).to_vec()
}

/// `Aᵀx`.
pub fn mat_t_vec(a: &Mat<f64>, x: &[f64]) -> Vec<f64> {
    let xm = Mat::from_fn(x.len(), 1, |i, _| x[i]);
    (a.transpose() * &xm).col_as_slice(0).to_vec()
}

/// `xᵀAx`.
pub fn quad_form(a: &Mat<f64>, x: &[f64]) -> f64 {
    dot(x, &mat_vec(a, x))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `UᵀMU`.
pub fn congruence(u: &Mat<f64>, m: &Mat<f64>) -> Mat<f64> {
    let mu = m * u;
    u.transpose() * &mu
}
