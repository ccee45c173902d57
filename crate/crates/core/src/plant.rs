//! Attacked LTI plant, steady-state Kalman filter, and residual generator.
//!
//! ```text
//! x_{k+1} = F x_k + G u_k + v_k           v ~ N(0, R1)
//! ybar_k  = C x_k + eta_k + delta_k       eta ~ N(0, R2)
//! xhat_{k+1} = F xhat_k + G u_k + L r_k   r_k = ybar_k - C xhat_k
//! z_k = r_k^T Sigma^-1 r_k
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{
    dare_solve, matrix_from_rows, matrix_to_rows, psd_factor, spd_inverse, symmetric_sqrt,
    DareOptions, Matrix, NumericsError, Vector,
};

/// Warm-up length used when none is configured.
pub const DEFAULT_WARM_UP_STEPS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlantError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("residual covariance is numerically singular")]
    SingularSigma,
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Plant matrices as nested row arrays, the on-disk model format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(rename = "F")]
    pub f: Vec<Vec<f64>>,
    #[serde(rename = "G")]
    pub g: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "R0")]
    pub r0: Vec<Vec<f64>>,
    #[serde(rename = "R1")]
    pub r1: Vec<Vec<f64>>,
    #[serde(rename = "R2")]
    pub r2: Vec<Vec<f64>>,
}

/// Discrete-time plant with its noise covariances.
///
/// Immutable once built; the covariance factors used for sampling are
/// computed at construction.
#[derive(Debug, Clone)]
pub struct LtiModel {
    f: Matrix,
    g: Matrix,
    c: Matrix,
    r0: Matrix,
    r1: Matrix,
    r2: Matrix,
    r0_factor: Matrix,
    r1_factor: Matrix,
    r2_factor: Matrix,
}

fn check_symmetric(name: &str, m: &Matrix) -> Result<(), PlantError> {
    let scale = m.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
    let asym = (m - m.transpose()).abs().max();
    if asym > 1e-12 * scale {
        return Err(PlantError::InvalidModel(format!("{name} is not symmetric")));
    }
    Ok(())
}

impl LtiModel {
    pub fn new(
        f: Matrix,
        g: Matrix,
        c: Matrix,
        r0: Matrix,
        r1: Matrix,
        r2: Matrix,
    ) -> Result<Self, PlantError> {
        let n = f.nrows();
        let m = c.nrows();
        if n == 0 || !f.is_square() {
            return Err(PlantError::InvalidModel(
                "F must be square and non-empty".into(),
            ));
        }
        if g.nrows() != n || g.ncols() == 0 {
            return Err(PlantError::InvalidModel(format!("G must have {n} rows")));
        }
        if m == 0 || c.ncols() != n {
            return Err(PlantError::InvalidModel(format!("C must have {n} columns")));
        }
        for (name, cov, dim) in [("R0", &r0, n), ("R1", &r1, n), ("R2", &r2, m)] {
            if cov.shape() != (dim, dim) {
                return Err(PlantError::InvalidModel(format!(
                    "{name} must be {dim}x{dim}"
                )));
            }
            check_symmetric(name, cov)?;
        }
        for mat in [&f, &g, &c] {
            crate::numerics::ensure_finite(mat)?;
        }
        let r0_factor = psd_factor(&r0)?;
        let r1_factor = psd_factor(&r1)?;
        let r2_factor = psd_factor(&r2)?;
        Ok(Self {
            f,
            g,
            c,
            r0,
            r1,
            r2,
            r0_factor,
            r1_factor,
            r2_factor,
        })
    }

    pub fn from_config(cfg: &ModelConfig) -> Result<Self, PlantError> {
        Self::new(
            matrix_from_rows(&cfg.f)?,
            matrix_from_rows(&cfg.g)?,
            matrix_from_rows(&cfg.c)?,
            matrix_from_rows(&cfg.r0)?,
            matrix_from_rows(&cfg.r1)?,
            matrix_from_rows(&cfg.r2)?,
        )
    }

    pub fn to_config(&self) -> ModelConfig {
        ModelConfig {
            f: matrix_to_rows(&self.f),
            g: matrix_to_rows(&self.g),
            c: matrix_to_rows(&self.c),
            r0: matrix_to_rows(&self.r0),
            r1: matrix_to_rows(&self.r1),
            r2: matrix_to_rows(&self.r2),
        }
    }

    pub fn f(&self) -> &Matrix {
        &self.f
    }
    pub fn g(&self) -> &Matrix {
        &self.g
    }
    pub fn c(&self) -> &Matrix {
        &self.c
    }
    pub fn r0(&self) -> &Matrix {
        &self.r0
    }
    pub fn r1(&self) -> &Matrix {
        &self.r1
    }
    pub fn r2(&self) -> &Matrix {
        &self.r2
    }
    /// State dimension.
    pub fn n(&self) -> usize {
        self.f.nrows()
    }
    /// Number of measured outputs.
    pub fn m(&self) -> usize {
        self.c.nrows()
    }
    /// Input dimension.
    pub fn l(&self) -> usize {
        self.g.ncols()
    }
}

/// Steady-state Kalman filter artifacts.
#[derive(Debug, Clone)]
pub struct KalmanDesign {
    pub p: Matrix,
    pub l: Matrix,
    pub sigma: Matrix,
    pub sigma_sqrt: Matrix,
    pub sigma_inv: Matrix,
}

impl KalmanDesign {
    /// `z = r^T Sigma^-1 r`.
    pub fn distance(&self, r: &Vector) -> f64 {
        r.dot(&(&self.sigma_inv * r)).max(0.0)
    }
}

pub fn design_filter(model: &LtiModel) -> Result<KalmanDesign, PlantError> {
    design_filter_with(model, DareOptions::default())
}

/// `L = F P C^T (R2 + C P C^T)^-1`, `Sigma = C P C^T + R2`, with `P` from the
/// Riccati solver.
pub fn design_filter_with(model: &LtiModel, opts: DareOptions) -> Result<KalmanDesign, PlantError> {
    let p = dare_solve(&model.f, &model.c, &model.r1, &model.r2, opts)?;
    let c = &model.c;
    let sigma = crate::numerics::symmetrize(&(c * &p * c.transpose() + &model.r2));
    let chol = sigma.clone().cholesky().ok_or(PlantError::SingularSigma)?;
    let fpct = &model.f * &p * c.transpose();
    // L = FPC^T Sigma^-1  <=>  Sigma L^T = C P F^T
    let l = chol.solve(&fpct.transpose()).transpose();
    let sigma_inv = spd_inverse(&sigma).ok_or(PlantError::SingularSigma)?;
    let sigma_sqrt = symmetric_sqrt(&sigma).map_err(|_| PlantError::SingularSigma)?;
    Ok(KalmanDesign {
        p,
        l,
        sigma,
        sigma_sqrt,
        sigma_inv,
    })
}

/// One realization of the process and measurement noise.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub v: Vector,
    pub eta: Vector,
}

/// Everything observable about one simulation step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Index of the step this record describes.
    pub k: u64,
    /// True output `C x + eta`.
    pub y: Vector,
    /// Received output `y + delta`.
    pub ybar: Vector,
    pub r: Vector,
    pub z: f64,
    pub delta: Vector,
    pub v: Vector,
    pub eta: Vector,
}

/// True state, estimate, and the seeded noise stream of one trajectory.
///
/// Normals are drawn with `rand_distr::StandardNormal` (ziggurat) from a
/// ChaCha8 stream seeded by `seed`; correlated draws are `W xi` with
/// `W W^T = R`. Draw order: `n` values for the initial state, then per step
/// `n` values for `v` followed by `m` values for `eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub x: Vector,
    pub xhat: Vector,
    /// Estimation error `x - xhat`.
    pub e: Vector,
    /// Index of the next step; starts at 1.
    pub k: u64,
    pub seed: u64,
    rng: ChaCha8Rng,
}

fn standard_normals(rng: &mut ChaCha8Rng, len: usize) -> Vector {
    Vector::from_iterator(len, (0..len).map(|_| StandardNormal.sample(rng)))
}

impl SimState {
    /// `x_1 ~ N(0, R0)`, `xhat_1 = E[x_1] = 0`.
    pub fn new(model: &LtiModel, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xi = standard_normals(&mut rng, model.n());
        let x = &model.r0_factor * xi;
        let xhat = Vector::zeros(model.n());
        let e = &x - &xhat;
        Self {
            x,
            xhat,
            e,
            k: 1,
            seed,
            rng,
        }
    }

    /// Starts from a given state and estimate instead of sampling `x_1`.
    pub fn from_parts(x: Vector, xhat: Vector, seed: u64) -> Self {
        let e = &x - &xhat;
        Self {
            x,
            xhat,
            e,
            k: 1,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn draw_noise(&mut self, model: &LtiModel) -> NoiseDraw {
        let xi_v = standard_normals(&mut self.rng, model.n());
        let xi_eta = standard_normals(&mut self.rng, model.m());
        NoiseDraw {
            v: &model.r1_factor * xi_v,
            eta: &model.r2_factor * xi_eta,
        }
    }

    /// Advances one step with freshly sampled noise.
    pub fn step(
        &mut self,
        model: &LtiModel,
        design: &KalmanDesign,
        u: &Vector,
        delta: &Vector,
    ) -> Result<StepRecord, PlantError> {
        let noise = self.draw_noise(model);
        self.step_with_noise(model, design, u, delta, noise)
    }

    /// Advances one step with the given noise realization. Used by attack
    /// generators that must see `eta_k` before choosing `delta_k`.
    pub fn step_with_noise(
        &mut self,
        model: &LtiModel,
        design: &KalmanDesign,
        u: &Vector,
        delta: &Vector,
        noise: NoiseDraw,
    ) -> Result<StepRecord, PlantError> {
        if u.len() != model.l() {
            return Err(PlantError::DimensionMismatch(format!(
                "input has length {}, expected {}",
                u.len(),
                model.l()
            )));
        }
        if delta.len() != model.m() {
            return Err(PlantError::DimensionMismatch(format!(
                "attack has length {}, expected {}",
                delta.len(),
                model.m()
            )));
        }
        let NoiseDraw { v, eta } = noise;
        let y = &model.c * &self.x + &eta;
        let ybar = &y + delta;
        let r = &ybar - &model.c * &self.xhat;
        let z = design.distance(&r);
        let gu = &model.g * u;
        let xhat_next = &model.f * &self.xhat + &gu + &design.l * &r;
        let x_next = &model.f * &self.x + &gu + &v;
        let record = StepRecord {
            k: self.k,
            y,
            ybar,
            r,
            z,
            delta: delta.clone(),
            v,
            eta,
        };
        self.x = x_next;
        self.xhat = xhat_next;
        self.e = &self.x - &self.xhat;
        self.k += 1;
        Ok(record)
    }
}

/// Control law applied to the estimate. The residual does not depend on `u`,
/// so detector behavior is controller independent.
pub trait Controller {
    fn control(&self, xhat: &Vector, k: u64) -> Vector;
}

/// `u = 0`.
#[derive(Debug, Clone, Copy)]
pub struct ZeroInput {
    pub dim: usize,
}

impl Controller for ZeroInput {
    fn control(&self, _xhat: &Vector, _k: u64) -> Vector {
        Vector::zeros(self.dim)
    }
}

/// `u = -K xhat`.
#[derive(Debug, Clone)]
pub struct StateFeedback {
    pub gain: Matrix,
}

impl Controller for StateFeedback {
    fn control(&self, xhat: &Vector, _k: u64) -> Vector {
        -(&self.gain * xhat)
    }
}

/// Runs `steps` unattacked, uncontrolled steps from `x_1 ~ N(0, R0)`,
/// `xhat_1 = 0` and returns the terminal state.
pub fn warm_up(
    model: &LtiModel,
    design: &KalmanDesign,
    steps: usize,
    seed: u64,
) -> Result<SimState, PlantError> {
    if steps == 0 {
        return Err(PlantError::InvalidModel(
            "warm-up needs at least one step".into(),
        ));
    }
    let mut state = SimState::new(model, seed);
    let u = Vector::zeros(model.l());
    let delta = Vector::zeros(model.m());
    for _ in 0..steps {
        state.step(model, design, &u, &delta)?;
    }
    Ok(state)
}
