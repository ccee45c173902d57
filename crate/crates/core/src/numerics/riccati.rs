use super::{inf_norm, symmetrize, Matrix, NumericsError};

/// Stopping rule for [`dare_solve`].
#[derive(Debug, Clone, Copy)]
pub struct DareOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DareOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 1_000_000,
        }
    }
}

/// One application of the Riccati map
/// `P -> F P F^T + R1 - F P C^T (R2 + C P C^T)^-1 C P F^T`.
fn riccati_map(
    f: &Matrix,
    c: &Matrix,
    r1: &Matrix,
    r2: &Matrix,
    p: &Matrix,
) -> Result<Matrix, NumericsError> {
    let pct = p * c.transpose();
    let innovation = symmetrize(&(c * &pct + r2));
    let chol = innovation
        .cholesky()
        .ok_or(NumericsError::SingularInnovation)?;
    let fpct = f * &pct;
    // (R2 + CPC^T)^-1 C P F^T
    let gain_t = chol.solve(&fpct.transpose());
    let next = f * p * f.transpose() + r1 - &fpct * gain_t;
    Ok(symmetrize(&next))
}

/// Residual `F P F^T - P + R1 - F P C^T (R2 + C P C^T)^-1 C P F^T`.
pub fn dare_residual(
    f: &Matrix,
    c: &Matrix,
    r1: &Matrix,
    r2: &Matrix,
    p: &Matrix,
) -> Result<Matrix, NumericsError> {
    Ok(riccati_map(f, c, r1, r2, p)? - p)
}

/// Solves the filtering Riccati equation by fixed-point iteration from
/// `P_0 = R1`.
///
/// The residual of an iterate equals the step to the next one, so the
/// returned `P` is the last iterate whose residual (induced infinity norm)
/// was measured at or below `tol`.
pub fn dare_solve(
    f: &Matrix,
    c: &Matrix,
    r1: &Matrix,
    r2: &Matrix,
    opts: DareOptions,
) -> Result<Matrix, NumericsError> {
    let n = f.nrows();
    if !f.is_square()
        || c.ncols() != n
        || r1.shape() != (n, n)
        || r2.shape() != (c.nrows(), c.nrows())
    {
        return Err(NumericsError::InvalidMatrix(
            "dimension mismatch between F, C, R1, R2".into(),
        ));
    }
    let mut p = symmetrize(r1);
    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let next = riccati_map(f, c, r1, r2, &p)?;
        residual = inf_norm(&(&next - &p));
        if !residual.is_finite() {
            break;
        }
        if residual <= opts.tol {
            return Ok(p);
        }
        p = next;
    }
    Err(NumericsError::NoConvergence {
        iterations: opts.max_iter,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::matrix_from_rows;

    fn scalar(v: f64) -> Matrix {
        Matrix::from_element(1, 1, v)
    }

    /// Positive root of p = f^2 p + r1 - f^2 c^2 p^2 / (r2 + c^2 p), found by
    /// bisection on the cleared quadratic.
    fn scalar_dare_oracle(f: f64, c: f64, r1: f64, r2: f64) -> f64 {
        let g = |p: f64| f * f * p + r1 - f * f * c * c * p * p / (r2 + c * c * p) - p;
        let (mut lo, mut hi) = (0.0, 1.0);
        while g(hi) > 0.0 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn scalar_system_matches_quadratic_root() {
        let p = dare_solve(
            &scalar(0.5),
            &scalar(1.0),
            &scalar(1.0),
            &scalar(1.0),
            DareOptions::default(),
        )
        .unwrap();
        let oracle = scalar_dare_oracle(0.5, 1.0, 1.0, 1.0);
        // closed form for this case: p^2 - 0.25 p - 1 = 0
        let closed = (0.25 + (0.0625_f64 + 4.0).sqrt()) / 2.0;
        assert!((oracle - closed).abs() < 1e-12);
        assert!(
            (p[(0, 0)] - oracle).abs() < 1e-11,
            "{} vs {oracle}",
            p[(0, 0)]
        );
    }

    #[test]
    fn zero_dynamics_collapse_to_process_noise() {
        let f = Matrix::zeros(3, 3);
        let c = matrix_from_rows(&[vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]]).unwrap();
        let r1 = matrix_from_rows(&[
            vec![2.0, 0.5, 0.0],
            vec![0.5, 1.0, 0.0],
            vec![0.0, 0.0, 3.0],
        ])
        .unwrap();
        let r2 = Matrix::identity(2, 2);
        let p = dare_solve(&f, &c, &r1, &r2, DareOptions::default()).unwrap();
        assert_eq!(p, r1);
    }

    #[test]
    fn singular_innovation_is_reported() {
        let f = scalar(0.5);
        let c = scalar(0.0);
        let r = scalar(1.0);
        let err = dare_solve(&f, &c, &r, &scalar(0.0), DareOptions::default()).unwrap_err();
        assert_eq!(err, NumericsError::SingularInnovation);
    }

    #[test]
    fn iteration_budget_exhaustion() {
        let opts = DareOptions {
            tol: 1e-14,
            max_iter: 2,
        };
        let err = dare_solve(
            &scalar(0.99),
            &scalar(1.0),
            &scalar(1.0),
            &scalar(1.0),
            opts,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            NumericsError::NoConvergence { iterations: 2, .. }
        ));
    }

    #[test]
    fn undetectable_unstable_mode_does_not_converge() {
        // unstable and unobserved: P grows without bound
        let f = scalar(1.5);
        let c = scalar(0.0);
        let opts = DareOptions {
            tol: 1e-12,
            max_iter: 5000,
        };
        assert!(dare_solve(&f, &c, &scalar(1.0), &scalar(1.0), opts).is_err());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let err = dare_solve(
            &Matrix::identity(2, 2),
            &Matrix::identity(1, 3),
            &Matrix::identity(2, 2),
            &Matrix::identity(1, 1),
            DareOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, NumericsError::InvalidMatrix(_)));
    }
}
