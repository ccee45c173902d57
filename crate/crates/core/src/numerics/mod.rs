//! Numerical kernels shared by the rest of the crate.
//!
//! Everything here is a pure function of its inputs. Dense matrices are
//! `nalgebra` dynamic matrices; dimensions are validated at the boundaries
//! (config loading, model construction) rather than on every call.

mod gamma;
mod norm;
mod riccati;
mod toeplitz;

pub use gamma::{
    inverse_regularized_lower_gamma, ln_gamma, regularized_lower_gamma, regularized_upper_gamma,
};
pub use norm::{contraction_norm, top_right_singular_vector, ContractionNorm};
pub use riccati::{dare_residual, dare_solve, DareOptions};
pub use toeplitz::toeplitz_solve;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative eigenvalue floor below which a symmetric matrix is treated as
/// rank deficient.
pub const EIGEN_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("iteration did not converge after {iterations} steps (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("innovation covariance R2 + C P C^T is numerically singular")]
    SingularInnovation,
    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },
    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },
    #[error("spectral radius {spectral_radius} is not below one")]
    SpectralRadiusNotLessThanOne { spectral_radius: f64 },
    #[error("argument outside the function domain: {0}")]
    DomainError(String),
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("linear system is numerically singular")]
    SingularSystem,
}

/// Builds a matrix from nested rows, rejecting ragged, empty, or non-finite
/// input.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Matrix, NumericsError> {
    let nrows = rows.len();
    if nrows == 0 {
        return Err(NumericsError::InvalidMatrix("no rows".into()));
    }
    let ncols = rows[0].len();
    if ncols == 0 {
        return Err(NumericsError::InvalidMatrix("empty first row".into()));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
        return Err(NumericsError::InvalidMatrix(format!(
            "row {i} has {} entries, expected {ncols}",
            rows[i].len()
        )));
    }
    let m = Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]);
    ensure_finite(&m)?;
    Ok(m)
}

pub fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn ensure_finite(m: &Matrix) -> Result<(), NumericsError> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NumericsError::InvalidMatrix("non-finite entry".into()))
    }
}

/// Induced 2-norm (largest singular value).
pub fn op_norm2(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .singular_values()
        .iter()
        .fold(0.0_f64, |acc, &s| acc.max(s))
}

/// Induced infinity norm (largest absolute row sum).
pub fn inf_norm(m: &Matrix) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// 2-norm condition number `||A|| ||A^-1||`, infinite for singular input.
pub fn condition_number(m: &Matrix) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Symmetric square root `M = M^T`, `M M = S`, via eigendecomposition.
pub fn symmetric_sqrt(s: &Matrix) -> Result<Matrix, NumericsError> {
    if !s.is_square() {
        return Err(NumericsError::InvalidMatrix("matrix is not square".into()));
    }
    ensure_finite(s)?;
    let eig = SymmetricEigen::new(symmetrize(s));
    let scale = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let min = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if min <= EIGEN_FLOOR * scale.max(1.0) {
        return Err(NumericsError::NotPositiveDefinite {
            min_eigenvalue: min,
        });
    }
    let d = Matrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    let m = &eig.eigenvectors * d * eig.eigenvectors.transpose();
    Ok(symmetrize(&m))
}

/// Factor `W` with `W W^T = R` for a positive semidefinite `R`.
///
/// Cholesky when `R` is positive definite; otherwise an eigen-factor with
/// eigenvalues below the floor clamped to zero.
pub fn psd_factor(r: &Matrix) -> Result<Matrix, NumericsError> {
    if !r.is_square() {
        return Err(NumericsError::InvalidMatrix("matrix is not square".into()));
    }
    ensure_finite(r)?;
    let sym = symmetrize(r);
    if let Some(chol) = sym.clone().cholesky() {
        return Ok(chol.l());
    }
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let floor = EIGEN_FLOOR * scale.max(1.0);
    let min = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if min < -floor {
        return Err(NumericsError::NotPositiveSemidefinite {
            min_eigenvalue: min,
        });
    }
    let d = Matrix::from_diagonal(
        &eig.eigenvalues
            .map(|l| if l > floor { l.sqrt() } else { 0.0 }),
    );
    Ok(&eig.eigenvectors * d)
}

/// Inverse of a symmetric positive definite matrix through its Cholesky
/// factor.
pub fn spd_inverse(s: &Matrix) -> Option<Matrix> {
    let chol = symmetrize(s).cholesky()?;
    Some(symmetrize(&chol.inverse()))
}
