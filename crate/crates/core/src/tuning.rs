//! Detector calibration.
//!
//! The CUSUM false-alarm rate is approximated by discretizing `[0, tau]` into
//! `N` cells of width `Delta = 2 tau / (2N - 1)` plus an absorbing alarm
//! state, following the Markov-chain scheme of Brook and Evans. The chi-squared
//! threshold is closed form.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{
    inverse_regularized_lower_gamma, regularized_lower_gamma, regularized_upper_gamma,
    toeplitz_solve, Matrix, NumericsError, Vector,
};

pub const DEFAULT_PARTITIONS: usize = 1000;
pub const DEFAULT_RATE_TOL: f64 = 1e-4;
const BRACKET_WIDTH_TOL: f64 = 1e-6;
const TAU_LOWER: f64 = 1e-3;
const TAU_UPPER_START: f64 = 1.0;
const TAU_MAX: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TuningError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("invalid tuning input: {0}")]
    InvalidInput(String),
    #[error("I - R is numerically singular")]
    SingularSystem,
    #[error("no threshold in (0, {tau_max}] brings the rate below {target} (rate {rate} at the upper end)")]
    BracketFailure {
        target: f64,
        tau_max: f64,
        rate: f64,
    },
    #[error("target rate {target} is unreachable: even tau -> 0 gives only {max_rate}")]
    Infeasible { target: f64, max_rate: f64 },
}

/// `b_bar = m`: the CUSUM statistic is mean-square bounded iff `b > m`.
pub fn bias_lower_bound(m: usize) -> f64 {
    m as f64
}

/// `S_bar = ((b - m)^2 + 2m) / (2 (b - m))`: above this level the
/// conditional drift of `S^2` is negative.
pub fn drift_boundary(b: f64, m: usize) -> Result<f64, TuningError> {
    let m = m as f64;
    if !(b > m) {
        return Err(TuningError::Numerics(NumericsError::DomainError(format!(
            "drift boundary needs b > m, got b = {b}, m = {m}"
        ))));
    }
    let d = b - m;
    Ok((d * d + 2.0 * m) / (2.0 * d))
}

/// CDF of `z - b` with `z ~ chi-squared(m)`: `P(m/2, (x + b)/2)` on
/// `x >= -b`, zero below.
pub fn shifted_chi2_cdf(m: usize, b: f64, x: f64) -> f64 {
    assert!(m >= 1, "chi-squared needs at least one degree of freedom");
    let t = x + b;
    if t <= 0.0 {
        return 0.0;
    }
    regularized_lower_gamma(m as f64 / 2.0, t / 2.0).expect("arguments checked positive")
}

/// Discretized CUSUM chain for fixed `(m, b, tau, N)`.
#[derive(Debug, Clone)]
pub struct ArlApproximation {
    pub n: usize,
    pub delta_s: f64,
    /// `(N+1) x (N+1)` row-stochastic matrix; the last state is the alarm.
    pub transition: Matrix,
    /// Transient block `R` of `transition`.
    pub fundamental: Matrix,
    /// Expected absorption times `(I - R)^-1 1`.
    pub mu: Vector,
    /// `1 / mu_1`.
    pub false_alarm_rate: f64,
}

/// The pieces of `R` in structured form: `R[j][nu] = p(nu - j) + w_j [nu == 0]`.
struct ChainParts {
    n: usize,
    delta_s: f64,
    /// `p(d)` at index `d + n - 1`, for `d` in `-(n-1)..=(n-1)`.
    p: Vec<f64>,
    /// `w_j = F(-j Delta - Delta/2)`, the mass that the `max(0, .)` floor
    /// folds into state 0.
    w: Vec<f64>,
    /// `1 - T_{N-1-j}`: probability of jumping from state `j` to the alarm.
    exit: Vec<f64>,
}

/// Upper tail `pr(z - b > x)`, accurate when tiny.
fn shifted_chi2_sf(m: usize, b: f64, x: f64) -> f64 {
    let t = x + b;
    if t <= 0.0 {
        return 1.0;
    }
    regularized_upper_gamma(m as f64 / 2.0, t / 2.0).expect("arguments checked positive")
}

fn validate(m: usize, b: f64, tau: f64, n: usize) -> Result<(), TuningError> {
    if m == 0 {
        return Err(TuningError::InvalidInput("m must be at least 1".into()));
    }
    if !(b > 0.0) || !b.is_finite() {
        return Err(TuningError::InvalidInput(format!(
            "bias b = {b} must be positive"
        )));
    }
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(TuningError::InvalidInput(format!(
            "threshold tau = {tau} must be positive"
        )));
    }
    if n < 2 {
        return Err(TuningError::InvalidInput(format!(
            "need N >= 2 partitions, got {n}"
        )));
    }
    Ok(())
}

fn chain_parts(m: usize, b: f64, tau: f64, n: usize) -> Result<ChainParts, TuningError> {
    validate(m, b, tau, n)?;
    let delta_s = 2.0 * tau / (2 * n - 1) as f64;
    // upper cell edges i Delta + Delta/2 for i in -n..=n-1
    let edge = |i: isize| i as f64 * delta_s + 0.5 * delta_s;
    let range = -(n as isize)..n as isize;
    let cdf: Vec<f64> = range
        .clone()
        .map(|i| shifted_chi2_cdf(m, b, edge(i)))
        .collect();
    let sf: Vec<f64> = range.map(|i| shifted_chi2_sf(m, b, edge(i))).collect();
    let idx = |i: isize| (i + n as isize) as usize;
    // cell masses from whichever tail avoids cancellation
    let p = (-(n as isize - 1)..n as isize)
        .map(|d| {
            let (lo, hi) = (idx(d - 1), idx(d));
            if sf[lo] < 0.5 {
                sf[lo] - sf[hi]
            } else {
                cdf[hi] - cdf[lo]
            }
        })
        .collect();
    let w = (0..n as isize).map(|j| cdf[idx(-j - 1)]).collect();
    let exit = (0..n as isize)
        .map(|j| sf[idx(n as isize - 1 - j)])
        .collect();
    Ok(ChainParts {
        n,
        delta_s,
        p,
        w,
        exit,
    })
}

/// Above this expected run length the Toeplitz path is not trusted: the
/// smallest singular value of `I - R` is of order `1 / mu_1`.
const FAST_PATH_MAX_ARL: f64 = 1e8;

/// `(I - R)^-1 1` via Levinson on the Toeplitz part `I - p(nu - j)` and a
/// Sherman-Morrison correction for the rank-one column `w e_0^T`.
///
/// Every row of `R` sums to less than one, so `I - R` and its Toeplitz part
/// are strictly diagonally dominant, as are all their leading blocks. When
/// the chain almost never absorbs, falls back to [`absorption_times_gth`].
fn absorption_times(parts: &ChainParts) -> Result<Vec<f64>, TuningError> {
    let n = parts.n;
    // A[i][j] = diag(i - j) = [i == j] - p(j - i)
    let diag: Vec<f64> = (0..2 * n - 1)
        .map(|idx| {
            let d = idx as isize - (n as isize - 1);
            let kron = if d == 0 { 1.0 } else { 0.0 };
            kron - parts.p[(-d + n as isize - 1) as usize]
        })
        .collect();
    let ones = vec![1.0; n];
    let fast = toeplitz_solve(&diag, &[&ones, &parts.w])
        .ok()
        .and_then(|sol| {
            let (u, v) = (&sol[0], &sol[1]);
            let coef = u[0] / (1.0 - v[0]);
            let mu: Vec<f64> = u.iter().zip(v).map(|(ui, vi)| ui + coef * vi).collect();
            let trusted = mu
                .iter()
                .all(|x| x.is_finite() && *x >= 1.0 && *x <= FAST_PATH_MAX_ARL);
            trusted.then_some(mu)
        });
    match fast {
        Some(mu) => Ok(mu),
        None => absorption_times_gth(parts),
    }
}

/// Subtraction-free Gaussian elimination on the M-matrix `I - R`.
///
/// Each pivot is recomputed as (exit probability + off-diagonal mass) of its
/// row, and elimination only ever adds nonnegative terms, so tiny exit
/// probabilities survive intact (Grassmann-Taksar-Heyman). O(N^3).
fn absorption_times_gth(parts: &ChainParts) -> Result<Vec<f64>, TuningError> {
    let n = parts.n;
    let p = |d: isize| parts.p[(d + n as isize - 1) as usize];
    // off-diagonal transition mass, row-major; the diagonal slot is unused
    let mut r = vec![0.0; n * n];
    for j in 0..n {
        for nu in 0..n {
            if nu != j {
                r[j * n + nu] =
                    p(nu as isize - j as isize) + if nu == 0 { parts.w[j] } else { 0.0 };
            }
        }
    }
    let mut exit = parts.exit.clone();
    let mut rhs = vec![1.0; n];
    let mut pivot = vec![0.0; n];
    for k in 0..n {
        let d: f64 = exit[k] + r[k * n + k + 1..(k + 1) * n].iter().sum::<f64>();
        if !(d > 0.0) {
            return Err(TuningError::SingularSystem);
        }
        pivot[k] = d;
        let (head, tail) = r.split_at_mut((k + 1) * n);
        let row_k = &head[k * n..];
        for i in k + 1..n {
            let row_i = &mut tail[(i - k - 1) * n..(i - k) * n];
            let f = row_i[k] / d;
            if f == 0.0 {
                continue;
            }
            for j in k + 1..n {
                if j != i {
                    row_i[j] += f * row_k[j];
                }
            }
            exit[i] += f * exit[k];
            rhs[i] += f * rhs[k];
        }
    }
    let mut mu = vec![0.0; n];
    for k in (0..n).rev() {
        let row = &r[k * n..(k + 1) * n];
        let acc: f64 = (k + 1..n).map(|j| row[j] * mu[j]).sum();
        mu[k] = (rhs[k] + acc) / pivot[k];
    }
    if mu.iter().any(|x| !x.is_finite()) {
        return Err(TuningError::SingularSystem);
    }
    Ok(mu)
}

/// `Ã(tau) = 1 / mu_1` without materializing the chain.
pub fn approx_false_alarm_rate(m: usize, b: f64, tau: f64, n: usize) -> Result<f64, TuningError> {
    let parts = chain_parts(m, b, tau, n)?;
    Ok(1.0 / absorption_times(&parts)?[0])
}

pub fn build_markov_chain(
    m: usize,
    b: f64,
    tau: f64,
    n: usize,
) -> Result<ArlApproximation, TuningError> {
    let parts = chain_parts(m, b, tau, n)?;
    let p = |d: isize| parts.p[(d + n as isize - 1) as usize];
    let fundamental = Matrix::from_fn(n, n, |j, nu| {
        let base = p(nu as isize - j as isize);
        if nu == 0 {
            base + parts.w[j]
        } else {
            base
        }
    });
    let mut transition = Matrix::zeros(n + 1, n + 1);
    transition.view_mut((0, 0), (n, n)).copy_from(&fundamental);
    for j in 0..n {
        transition[(j, n)] = parts.exit[j];
    }
    transition[(n, n)] = 1.0;
    let mu = Vector::from_vec(absorption_times(&parts)?);
    Ok(ArlApproximation {
        n,
        delta_s: parts.delta_s,
        transition,
        fundamental,
        false_alarm_rate: 1.0 / mu[0],
        mu,
    })
}

/// Outcome of the CUSUM threshold search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub m: usize,
    pub b: f64,
    pub tau: f64,
    #[serde(rename = "targetRate")]
    pub target_rate: f64,
    #[serde(rename = "approxRate")]
    pub achieved_approx_rate: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub iterations: usize,
    /// `b > m`; when false the boundedness guarantee does not apply.
    #[serde(rename = "strictBias")]
    pub strict_bias: bool,
}

/// Bisection on `tau -> Ã(tau)` for `Ã = target`.
///
/// The bracket starts at `[1e-3, 1]` and the upper end doubles until the
/// rate drops below the target. Stops when `|Ã - target| <= tol` or the
/// bracket is narrower than `1e-6`.
pub fn solve_cusum_threshold(
    m: usize,
    b: f64,
    target_rate: f64,
    n: usize,
    tol: f64,
) -> Result<TuningResult, TuningError> {
    if !(target_rate > 0.0 && target_rate < 1.0) {
        return Err(TuningError::InvalidInput(format!(
            "target rate {target_rate} must lie in (0, 1)"
        )));
    }
    if !(tol > 0.0) {
        return Err(TuningError::InvalidInput(format!(
            "tolerance {tol} must be positive"
        )));
    }
    let rate = |tau: f64| approx_false_alarm_rate(m, b, tau, n);
    let finish = |tau: f64, achieved: f64, iterations: usize| TuningResult {
        m,
        b,
        tau,
        target_rate,
        achieved_approx_rate: achieved,
        n,
        iterations,
        strict_bias: b > bias_lower_bound(m),
    };

    let mut lo = TAU_LOWER;
    let rate_lo = rate(lo)?;
    if rate_lo <= target_rate {
        return Err(TuningError::Infeasible {
            target: target_rate,
            max_rate: rate_lo,
        });
    }
    let mut hi = TAU_UPPER_START;
    let mut rate_hi = rate(hi)?;
    while rate_hi >= target_rate {
        if hi >= TAU_MAX {
            return Err(TuningError::BracketFailure {
                target: target_rate,
                tau_max: TAU_MAX,
                rate: rate_hi,
            });
        }
        lo = hi;
        hi = (2.0 * hi).min(TAU_MAX);
        rate_hi = rate(hi)?;
    }

    let mut iterations = 0;
    loop {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        let r = rate(mid)?;
        if (r - target_rate).abs() <= tol || hi - lo <= BRACKET_WIDTH_TOL {
            return Ok(finish(mid, r, iterations));
        }
        if r > target_rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

/// `alpha* = 2 P^-1(m/2, 1 - target)`: the chi-squared threshold with
/// false-alarm rate `target`.
pub fn chi2_threshold(m: usize, target_rate: f64) -> Result<f64, TuningError> {
    if m == 0 {
        return Err(TuningError::InvalidInput("m must be at least 1".into()));
    }
    if !(target_rate > 0.0 && target_rate < 1.0) {
        return Err(TuningError::InvalidInput(format!(
            "target rate {target_rate} must lie in (0, 1)"
        )));
    }
    Ok(2.0 * inverse_regularized_lower_gamma(m as f64 / 2.0, 1.0 - target_rate)?)
}
