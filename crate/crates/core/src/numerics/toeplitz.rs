use super::NumericsError;

/// Solves `A x = y` for each right-hand side, where `A` is the `n x n`
/// Toeplitz matrix `A[i][j] = diag(i - j)`.
///
/// `diag` has length `2n - 1` and holds the diagonals `-(n-1)..=(n-1)`, so
/// the value for offset `d` is `diag[d + n - 1]`.
///
/// General (nonsymmetric) Levinson recursion: O(n^2) per right-hand side.
/// Every leading principal block must be nonsingular; strict diagonal
/// dominance is sufficient and is what the callers guarantee.
pub fn toeplitz_solve(diag: &[f64], rhs: &[&[f64]]) -> Result<Vec<Vec<f64>>, NumericsError> {
    if diag.len() % 2 == 0 {
        return Err(NumericsError::InvalidMatrix(
            "Toeplitz diagonals must have odd length 2n - 1".into(),
        ));
    }
    let n = diag.len().div_ceil(2);
    if let Some(bad) = rhs.iter().find(|y| y.len() != n) {
        return Err(NumericsError::InvalidMatrix(format!(
            "right-hand side has length {}, expected {n}",
            bad.len()
        )));
    }
    let a = |d: isize| diag[(d + n as isize - 1) as usize];
    let a0 = a(0);
    if a0 == 0.0 || !a0.is_finite() {
        return Err(NumericsError::SingularSystem);
    }

    // fwd: A_k fwd = e_1, bwd: A_k bwd = e_k, grown one dimension at a time.
    let mut fwd = vec![0.0; n];
    let mut bwd = vec![0.0; n];
    let mut next_f = vec![0.0; n];
    let mut next_b = vec![0.0; n];
    fwd[0] = 1.0 / a0;
    bwd[0] = 1.0 / a0;
    let mut xs: Vec<Vec<f64>> = rhs
        .iter()
        .map(|y| {
            let mut x = vec![0.0; n];
            x[0] = y[0] / a0;
            x
        })
        .collect();

    for k in 1..n {
        // error terms of the zero-padded vectors in the (k+1)-dimensional system
        let eps_f: f64 = (0..k).map(|i| a((k - i) as isize) * fwd[i]).sum();
        let eps_b: f64 = (0..k).map(|i| a(-(i as isize + 1)) * bwd[i]).sum();
        let denom = 1.0 - eps_f * eps_b;
        if denom.abs() < 1e-300 || !denom.is_finite() {
            return Err(NumericsError::SingularSystem);
        }
        for i in 0..=k {
            let f_pad = if i < k { fwd[i] } else { 0.0 };
            let b_pad = if i > 0 { bwd[i - 1] } else { 0.0 };
            next_f[i] = (f_pad - eps_f * b_pad) / denom;
            next_b[i] = (b_pad - eps_b * f_pad) / denom;
        }
        fwd[..=k].copy_from_slice(&next_f[..=k]);
        bwd[..=k].copy_from_slice(&next_b[..=k]);

        for (x, y) in xs.iter_mut().zip(rhs) {
            let eps_x: f64 = (0..k).map(|i| a((k - i) as isize) * x[i]).sum();
            let scale = y[k] - eps_x;
            for i in 0..=k {
                x[i] += scale * bwd[i];
            }
        }
    }
    if xs.iter().flatten().any(|v| !v.is_finite()) {
        return Err(NumericsError::SingularSystem);
    }
    Ok(xs)
}
