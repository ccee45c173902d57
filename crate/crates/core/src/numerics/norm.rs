//! Similarity-induced contraction norms and dominant singular directions.
//!
//! For a stable `F` we build an invertible `T` with `||T^-1 F T||_2 < 1` and
//! use `||A||_* := ||T^-1 A T||_2`. Because `||A||_2 <= κ(T) ||A||_*` for every
//! `A`, the constant `c = κ(T)` bounds `||F^k||_2 <= c ||F||_*^k` for all `k`.

use nalgebra::Schur;

use super::{condition_number, op_norm2, Matrix, NumericsError, Vector};

const RADIUS_TOL: f64 = 1e-12;
const MAX_EIGVEC_CONDITION: f64 = 1e8;

#[derive(Debug, Clone)]
pub struct ContractionNorm {
    /// Similarity `T`.
    pub transform: Matrix,
    pub transform_inv: Matrix,
    /// `κ(T) = ||T||_2 ||T^-1||_2`, the constant `c`.
    pub condition_number: f64,
    /// `||F||_* = ||T^-1 F T||_2`.
    pub star_norm_of_f: f64,
    pub spectral_radius: f64,
}

impl ContractionNorm {
    /// `||A||_* = ||T^-1 A T||_2`.
    pub fn star_norm(&self, a: &Matrix) -> f64 {
        op_norm2(&(&self.transform_inv * a * &self.transform))
    }
}

/// Eigenvalues of the real Schur factor as (re, im) pairs, in diagonal order.
fn schur_blocks(t: &Matrix) -> Vec<(usize, usize, f64, f64)> {
    let n = t.nrows();
    let scale = t.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1e-300);
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)].abs() > 1e-14 * scale {
            let (a, b, c, d) = (t[(i, i)], t[(i, i + 1)], t[(i + 1, i)], t[(i + 1, i + 1)]);
            let half_trace = 0.5 * (a + d);
            let disc = 0.25 * (a - d) * (a - d) + b * c;
            if disc < 0.0 {
                blocks.push((i, 2, half_trace, (-disc).sqrt()));
            } else {
                // unreduced block with real eigenvalues; treat as a 2x2 unit
                blocks.push((i, 2, half_trace, 0.0));
            }
            i += 2;
        } else {
            blocks.push((i, 1, t[(i, i)], 0.0));
            i += 1;
        }
    }
    blocks
}

fn spectral_radius_of_schur(t: &Matrix, blocks: &[(usize, usize, f64, f64)]) -> f64 {
    blocks
        .iter()
        .map(|&(i, size, re, im)| {
            if size == 1 || im > 0.0 {
                re.hypot(im)
            } else {
                let sub = t.view((i, i), (2, 2)).clone_owned();
                sub.complex_eigenvalues()
                    .iter()
                    .fold(0.0_f64, |a, z| a.max(z.norm()))
            }
        })
        .fold(0.0, f64::max)
}

/// Eigenvector matrix (unit columns) of an upper-triangular Schur factor with
/// distinct real diagonal, mapped back through `Q`.
fn eigenvector_transform(q: &Matrix, t: &Matrix) -> Option<Matrix> {
    let n = t.nrows();
    let lambdas: Vec<f64> = (0..n).map(|i| t[(i, i)]).collect();
    let scale = lambdas.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
    for i in 0..n {
        for j in 0..i {
            if (lambdas[i] - lambdas[j]).abs() <= 1e-8 * scale {
                return None;
            }
        }
    }
    let mut w = Matrix::zeros(n, n);
    for col in 0..n {
        let lambda = lambdas[col];
        w[(col, col)] = 1.0;
        for row in (0..col).rev() {
            let mut acc = 0.0;
            for k in row + 1..=col {
                acc += t[(row, k)] * w[(k, col)];
            }
            w[(row, col)] = -acc / (t[(row, row)] - lambda);
        }
    }
    let mut v = q * w;
    for mut c in v.column_iter_mut() {
        let norm = c.norm();
        c /= norm;
    }
    Some(v)
}

/// Block-diagonal similarity that turns every 2x2 complex block
/// `B` into the normal form `[[a, b], [-b, a]]`.
fn rotation_normalizer(t: &Matrix, blocks: &[(usize, usize, f64, f64)]) -> Matrix {
    let n = t.nrows();
    let mut w = Matrix::identity(n, n);
    for &(i, size, re, im) in blocks {
        if size == 2 && im > 0.0 {
            let b00 = t[(i, i)];
            let b01 = t[(i, i + 1)];
            // eigenvector (b01, λ - b00) for λ = re + i im; split real and
            // imaginary parts
            let p = [b01, re - b00];
            let q = [0.0, im];
            let norm = (p[0] * p[0] + p[1] * p[1] + q[1] * q[1]).sqrt();
            w[(i, i)] = p[0] / norm;
            w[(i + 1, i)] = p[1] / norm;
            w[(i, i + 1)] = q[0] / norm;
            w[(i + 1, i + 1)] = q[1] / norm;
        }
    }
    w
}

/// Builds a similarity `T` under which `F` is a strict contraction in the
/// operator 2-norm.
///
/// Diagonalizable `F` with distinct real eigenvalues uses its eigenvector
/// matrix, giving `||F||_* = ρ(F)`. Otherwise the real Schur form is
/// normalized block-wise and its strictly upper part damped by
/// `D = diag(1, ε, ε², ...)`, halving `ε` until
/// `||T^-1 F T||_2 <= (1 + ρ(F)) / 2`.
pub fn contraction_norm(f: &Matrix) -> Result<ContractionNorm, NumericsError> {
    if !f.is_square() || f.is_empty() {
        return Err(NumericsError::InvalidMatrix("F must be square".into()));
    }
    super::ensure_finite(f)?;
    let n = f.nrows();
    let (q, t) = Schur::new(f.clone()).unpack();
    let blocks = schur_blocks(&t);
    let rho = spectral_radius_of_schur(&t, &blocks);
    if rho >= 1.0 - RADIUS_TOL {
        return Err(NumericsError::SpectralRadiusNotLessThanOne {
            spectral_radius: rho,
        });
    }

    let finish = |transform: Matrix| -> Option<ContractionNorm> {
        let inv = transform.clone().try_inverse()?;
        let star = op_norm2(&(&inv * f * &transform));
        if star >= 1.0 {
            return None;
        }
        Some(ContractionNorm {
            condition_number: condition_number(&transform).max(1.0),
            transform,
            transform_inv: inv,
            star_norm_of_f: star,
            spectral_radius: rho,
        })
    };

    let all_real = blocks.iter().all(|&(_, size, _, _)| size == 1);
    if all_real {
        if let Some(v) = eigenvector_transform(&q, &t) {
            if condition_number(&v) < MAX_EIGVEC_CONDITION {
                if let Some(norm) = finish(v) {
                    return Ok(norm);
                }
            }
        }
    }

    // Schur fallback.
    let normalizer = rotation_normalizer(&t, &blocks);
    let base = &q * &normalizer;
    let target = 0.5 * (1.0 + rho);
    let mut block_index = vec![0usize; n];
    for (k, &(i, size, _, _)) in blocks.iter().enumerate() {
        for idx in i..i + size {
            block_index[idx] = k;
        }
    }
    let mut eps = 1.0_f64;
    for _ in 0..1100 {
        let d = Matrix::from_diagonal(&Vector::from_iterator(
            n,
            block_index.iter().map(|&k| eps.powi(k as i32)),
        ));
        let transform = &base * d;
        if let Some(norm) = finish(transform) {
            if norm.star_norm_of_f <= target || eps < 1e-300 {
                return Ok(norm);
            }
        }
        eps *= 0.5;
        if eps == 0.0 {
            break;
        }
    }
    Err(NumericsError::NoConvergence {
        iterations: 1100,
        residual: rho,
    })
}

/// Default starting direction for [`top_right_singular_vector`]:
/// `s_i ∝ 1/sqrt(i + 1)`. Non-uniform so that it is rarely orthogonal to
/// the dominant direction of structured matrices.
pub fn singular_vector_seed(n: usize) -> Vector {
    let v = Vector::from_iterator(n, (0..n).map(|i| 1.0 / ((i + 1) as f64).sqrt()));
    let norm = v.norm();
    v / norm
}

fn sign_normalize(mut v: Vector) -> Vector {
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12).copied() {
        if first < 0.0 {
            v = -v;
        }
    }
    v
}

/// Unit `v` maximizing `||A v||`, by power iteration on `A^T A` from
/// [`singular_vector_seed`].
///
/// When the top singular value is repeated the iteration returns the
/// seed's projection onto the dominant subspace (for the identity, the seed
/// itself). The sign is fixed so that the first non-negligible entry is
/// positive.
pub fn top_right_singular_vector(a: &Matrix, max_iter: usize) -> Result<Vector, NumericsError> {
    super::ensure_finite(a)?;
    let n = a.ncols();
    if n == 0 {
        return Err(NumericsError::InvalidMatrix("matrix has no columns".into()));
    }
    let gram = a.transpose() * a;
    let mut v = singular_vector_seed(n);
    let mut change = f64::INFINITY;
    for _ in 0..max_iter {
        let w = &gram * &v;
        let norm = w.norm();
        if norm == 0.0 {
            // A = 0: every direction is optimal
            return Ok(sign_normalize(v));
        }
        let next = w / norm;
        change = (&next - &v).norm();
        v = next;
        if change < 1e-14 {
            return Ok(sign_normalize(v));
        }
    }
    Err(NumericsError::NoConvergence {
        iterations: max_iter,
        residual: change,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::matrix_from_rows;

    #[test]
    fn scaled_identity_is_already_contractive() {
        let f = Matrix::identity(3, 3) * 0.5;
        let norm = contraction_norm(&f).unwrap();
        assert!((norm.star_norm_of_f - 0.5).abs() < 1e-14);
        assert!((norm.condition_number - 1.0).abs() < 1e-12);
        // T is orthogonal (identity up to signs / permutation)
        let tt = norm.transform.transpose() * &norm.transform;
        assert!((tt - Matrix::identity(3, 3)).abs().max() < 1e-12);
    }

    #[test]
    fn defective_with_large_coupling() {
        let f = matrix_from_rows(&[vec![0.9, 10.0], vec![0.0, 0.9]]).unwrap();
        assert!(op_norm2(&f) > 1.0);
        let norm = contraction_norm(&f).unwrap();
        let direct = op_norm2(&(&norm.transform_inv * &f * &norm.transform));
        assert!(direct < 1.0);
        assert!((direct - norm.star_norm_of_f).abs() < 1e-14);
        assert!(norm.condition_number >= 1.0);
    }

    #[test]
    fn rotation_block_is_normalized() {
        // eigenvalues 0.6 ± 0.7i, |λ| ≈ 0.922, strongly non-normal
        let f = matrix_from_rows(&[vec![0.6, 4.9], vec![-0.1, 0.6]]).unwrap();
        let norm = contraction_norm(&f).unwrap();
        assert!((norm.spectral_radius - (0.36_f64 + 0.49).sqrt()).abs() < 1e-12);
        assert!(norm.star_norm_of_f < 1.0);
    }

    #[test]
    fn mixed_real_and_complex_spectrum() {
        let f = matrix_from_rows(&[
            vec![0.5, 2.0, 1.0],
            vec![-0.3, 0.5, 3.0],
            vec![0.0, 0.0, 0.95],
        ])
        .unwrap();
        let norm = contraction_norm(&f).unwrap();
        assert!(norm.star_norm_of_f < 1.0);
        for k in 0..200 {
            let fk = f.pow(k as u32);
            let lhs = op_norm2(&fk);
            let rhs = norm.condition_number * norm.star_norm(&fk);
            assert!(lhs <= rhs * (1.0 + 1e-9) + 1e-12, "k = {k}");
        }
    }

    #[test]
    fn unstable_matrix_rejected() {
        let f = matrix_from_rows(&[vec![1.0, 0.0], vec![0.0, 0.5]]).unwrap();
        assert!(matches!(
            contraction_norm(&f),
            Err(NumericsError::SpectralRadiusNotLessThanOne { .. })
        ));
    }

    #[test]
    fn singular_vector_axis_aligned() {
        let a = matrix_from_rows(&[vec![3.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let v = top_right_singular_vector(&a, 10_000).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-12 && v[1].abs() < 1e-7);
    }

    #[test]
    fn singular_vector_identity_returns_seed() {
        let v = top_right_singular_vector(&Matrix::identity(4, 4), 10).unwrap();
        assert!((v - singular_vector_seed(4)).norm() < 1e-15);
    }

    #[test]
    fn singular_vector_sign_convention() {
        let a = matrix_from_rows(&[vec![-1.0, -1.0], vec![-1.0, -1.0]]).unwrap();
        let v = top_right_singular_vector(&a, 10_000).unwrap();
        assert!(v[0] > 0.0);
        assert!((v.norm() - 1.0).abs() < 1e-14);
    }
}
