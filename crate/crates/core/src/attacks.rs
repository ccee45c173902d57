//! Zero-alarm sensor attacks and the estimation-error envelopes they induce.
//!
//! From `k*` on, the attacker cancels `C e_k + eta_k` and injects a residual
//! of its own choosing, `r_k = Sigma^{1/2} d_k`, so `z_k = |d_k|^2`:
//!
//! * chi-squared: `|d_k|^2 = alpha` keeps `z_k <= alpha`;
//! * CUSUM: `|d_{k*}|^2 = tau + b - S_{k*-1}` lifts `S` to `tau`, then
//!   `|d_k|^2 = b` holds it there.
//!
//! The attack-driven error obeys `e^d_{k+1} = F e^d_k - L Sigma^{1/2} d_k`
//! and is bounded by the envelopes below for every `k`.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detectors::{Detector, DetectorConfig, DetectorError};
use crate::harness::fmt_sig;
use crate::numerics::{
    contraction_norm, op_norm2, top_right_singular_vector, ContractionNorm, Matrix, NumericsError,
    Vector,
};
use crate::plant::{KalmanDesign, LtiModel, PlantError, SimState};

pub const DEFAULT_ATTACK_START: u64 = 2000;

/// Relative shrink applied to every squared attack magnitude so that
/// floating-point rounding cannot push `z` or `S` across the threshold.
pub const MAGNITUDE_MARGIN: f64 = 1e-12;

/// Error norm beyond which a trajectory is declared divergent.
pub const DIVERGENCE_CAP: f64 = 1e12;

const SUPERPOSITION_TOL: f64 = 1e-9;
const SINGULAR_VECTOR_MAX_ITER: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttackError {
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("CUSUM statistic S = {s} is above tau = {tau} when the attack starts")]
    StateAboveThreshold { s: f64, tau: f64 },
    #[error("invalid attack plan: {0}")]
    InvalidPlan(String),
    #[error("error split broke at k = {k}: |e - e^v - e^d| = {gap:e}")]
    SuperpositionViolated { k: u64, gap: f64 },
}

/// How the attack direction is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionKind {
    /// `1/sqrt(m) * (1, ..., 1)`.
    Uniform,
    /// Top right singular vector of `(I - F)^-1 L Sigma^{1/2}`: maximizes the
    /// steady-state attack-driven error.
    WorstCase,
    /// User-supplied unit vector.
    Custom(Vec<f64>),
}

impl DirectionKind {
    pub fn resolve(&self, model: &LtiModel, design: &KalmanDesign) -> Result<Vector, AttackError> {
        let m = model.m();
        match self {
            DirectionKind::Uniform => Ok(Vector::from_element(m, 1.0 / (m as f64).sqrt())),
            DirectionKind::WorstCase => worst_case_direction(model, design),
            DirectionKind::Custom(v) => {
                if v.len() != m {
                    return Err(AttackError::InvalidPlan(format!(
                        "direction has length {}, expected {m}",
                        v.len()
                    )));
                }
                let d = Vector::from_column_slice(v);
                if (d.norm() - 1.0).abs() > 1e-9 {
                    return Err(AttackError::InvalidPlan(format!(
                        "direction must have unit norm, got {}",
                        d.norm()
                    )));
                }
                Ok(d)
            }
        }
    }
}

/// `(I - F)^-1 L Sigma^{1/2}`: maps a constant attack vector to minus the
/// steady-state attack-driven error.
pub fn steady_state_gain(model: &LtiModel, design: &KalmanDesign) -> Result<Matrix, AttackError> {
    let n = model.n();
    let i_minus_f = Matrix::identity(n, n) - model.f();
    let lu = i_minus_f.lu();
    lu.solve(&(&design.l * &design.sigma_sqrt))
        .ok_or_else(|| AttackError::InvalidPlan("I - F is singular".into()))
}

pub fn worst_case_direction(
    model: &LtiModel,
    design: &KalmanDesign,
) -> Result<Vector, AttackError> {
    let gain = steady_state_gain(model, design)?;
    Ok(top_right_singular_vector(&gain, SINGULAR_VECTOR_MAX_ITER)?)
}

/// Closed-form fixed point `-(I - F)^-1 L Sigma^{1/2} d` of the attack-driven
/// error under a constant free vector `d`.
pub fn steady_state_attack_error(
    model: &LtiModel,
    design: &KalmanDesign,
    d: &Vector,
) -> Result<Vector, AttackError> {
    Ok(-(steady_state_gain(model, design)? * d))
}

/// A zero-alarm attack against one detector.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackPlan {
    pub detector: DetectorConfig,
    /// Unit direction of the free vector `d_k`.
    pub direction: Vector,
    /// First attacked step `k*`.
    pub k_star: u64,
    /// Fraction of the maximal magnitude used, in `[0, 1]`.
    pub intensity: f64,
}

impl AttackPlan {
    pub fn new(detector: DetectorConfig, direction: Vector) -> Result<Self, AttackError> {
        if (direction.norm() - 1.0).abs() > 1e-9 {
            return Err(AttackError::InvalidPlan(format!(
                "direction must have unit norm, got {}",
                direction.norm()
            )));
        }
        Ok(Self {
            detector,
            direction,
            k_star: DEFAULT_ATTACK_START,
            intensity: 1.0,
        })
    }

    pub fn starting_at(mut self, k_star: u64) -> Result<Self, AttackError> {
        if k_star < 1 {
            return Err(AttackError::InvalidPlan(
                "attack start must be at least 1".into(),
            ));
        }
        self.k_star = k_star;
        Ok(self)
    }

    pub fn with_intensity(mut self, intensity: f64) -> Result<Self, AttackError> {
        if !(0.0..=1.0).contains(&intensity) {
            return Err(AttackError::InvalidPlan(format!(
                "intensity {intensity} must lie in [0, 1]"
            )));
        }
        self.intensity = intensity;
        Ok(self)
    }

    /// Free vector `d_k` injected through `Sigma^{1/2}`; zero before `k*`.
    ///
    /// `s_prev` is the CUSUM statistic `S_{k-1}` (ignored for chi-squared).
    pub fn free_vector(&self, k: u64, s_prev: f64) -> Result<Vector, AttackError> {
        if k < self.k_star {
            return Ok(Vector::zeros(self.direction.len()));
        }
        let budget = match self.detector {
            DetectorConfig::Chi2(c) => c.alpha,
            DetectorConfig::Cusum(c) => {
                if k == self.k_star {
                    if s_prev > c.tau {
                        return Err(AttackError::StateAboveThreshold {
                            s: s_prev,
                            tau: c.tau,
                        });
                    }
                    c.tau + c.b - s_prev
                } else {
                    c.b
                }
            }
        };
        let magnitude = self.intensity * (budget * (1.0 - MAGNITUDE_MARGIN)).sqrt();
        Ok(&self.direction * magnitude)
    }
}

/// `delta_k = -C e_k - eta_k + Sigma^{1/2} d_k` for `k >= k*`, zero before.
pub fn attack_delta(
    plan: &AttackPlan,
    model: &LtiModel,
    design: &KalmanDesign,
    k: u64,
    e: &Vector,
    eta: &Vector,
    s_prev: f64,
) -> Result<Vector, AttackError> {
    if k < plan.k_star {
        return Ok(Vector::zeros(model.m()));
    }
    let d = plan.free_vector(k, s_prev)?;
    Ok(-(model.c() * e) - eta + &design.sigma_sqrt * d)
}

/// Upper-bound sequence `gamma_k` for `k = k*, ..., k* + horizon`.
#[derive(Debug, Clone)]
pub struct BoundEnvelope {
    pub k_star: u64,
    /// `gamma_seq[i]` bounds `|e^d_{k* + i}|`.
    pub gamma_seq: Vec<f64>,
    pub asymptote: f64,
    pub norm: ContractionNorm,
}

impl BoundEnvelope {
    pub fn gamma(&self, k: u64) -> Option<f64> {
        k.checked_sub(self.k_star)
            .and_then(|i| self.gamma_seq.get(i as usize).copied())
    }
}

/// `|L Sigma^{1/2} tau_bar|` for the realized first-phase vector.
pub fn first_phase_norm(design: &KalmanDesign, tau_bar: &Vector) -> f64 {
    (&design.l * (&design.sigma_sqrt * tau_bar)).norm()
}

fn envelope(
    design: &KalmanDesign,
    f: &Matrix,
    steady_magnitude: f64,
    transient: f64,
    k_star: u64,
    horizon: usize,
) -> Result<BoundEnvelope, AttackError> {
    let norm = contraction_norm(f)?;
    let c = norm.condition_number;
    let q = norm.star_norm_of_f;
    let gain = op_norm2(&(&design.l * &design.sigma_sqrt));
    let scale = steady_magnitude * c * gain / (1.0 - q);
    // e^d_{k*} = 0 by construction, so gamma_{k*} = 0
    let mut gamma_seq = Vec::with_capacity(horizon + 1);
    gamma_seq.push(0.0);
    let mut q_pow = 1.0; // q^(j-1) for j = k - k*
    for _ in 1..=horizon {
        let geometric = scale * (1.0 - q_pow * q);
        gamma_seq.push(geometric + c * transient * q_pow);
        q_pow *= q;
    }
    Ok(BoundEnvelope {
        k_star,
        gamma_seq,
        asymptote: scale,
        norm,
    })
}

/// `gamma_k = sqrt(alpha) c |L Sigma^{1/2}| (1 - |F|_*^{k-k*}) / (1 - |F|_*)`.
pub fn chi2_bound_envelope(
    design: &KalmanDesign,
    f: &Matrix,
    alpha: f64,
    k_star: u64,
    horizon: usize,
) -> Result<BoundEnvelope, AttackError> {
    envelope(design, f, alpha.sqrt(), 0.0, k_star, horizon)
}

/// The chi-squared form with `sqrt(b)` plus the decaying first-phase term
/// `c |L Sigma^{1/2} tau_bar| |F|_*^{k-k*-1}`.
pub fn cusum_bound_envelope(
    design: &KalmanDesign,
    f: &Matrix,
    b: f64,
    first_phase_norm: f64,
    k_star: u64,
    horizon: usize,
) -> Result<BoundEnvelope, AttackError> {
    envelope(design, f, b.sqrt(), first_phase_norm, k_star, horizon)
}

/// One simulated step of an attacked run.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackStep {
    pub k: u64,
    pub delta: Vector,
    pub z: f64,
    /// CUSUM statistic after this step; `z` for chi-squared.
    pub s: f64,
    pub alarm: bool,
    pub e_norm: f64,
    pub e_attack_norm: f64,
    pub gamma: Option<f64>,
}

/// Result of [`split_error_trajectories`]; vectors are indexed by `k - 1`
/// and hold the error at the start of step `k`.
#[derive(Debug, Clone)]
pub struct SplitTrajectories {
    pub k_star: u64,
    pub e_full: Vec<Vector>,
    pub e_noise: Vec<Vector>,
    pub e_attack: Vec<Vector>,
    pub steps: Vec<AttackStep>,
    /// `None` when `rho(F) >= 1`.
    pub envelope: Option<BoundEnvelope>,
    /// Alarm indices at or after `k*`.
    pub alarms_after_start: Vec<u64>,
    pub diverged: bool,
}

impl SplitTrajectories {
    /// Largest `|e^d_k| / gamma_k` over steps with `gamma_k > 0`, and whether
    /// `|e^d_k| <= gamma_k + slack` held everywhere.
    pub fn bound_check(&self, slack: f64) -> (f64, bool) {
        let mut worst: f64 = 0.0;
        let mut ok = true;
        for s in &self.steps {
            if let Some(g) = s.gamma {
                if s.e_attack_norm > g + slack {
                    ok = false;
                }
                if g > 0.0 {
                    worst = worst.max(s.e_attack_norm / g);
                }
            }
        }
        (worst, ok)
    }

    /// Writes `k, delta_1..delta_m, z, S, e_norm, e_attack_norm, gamma`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        crate::harness::output::write_csv_preamble(&mut out, "attack-trace")?;
        let m = self.steps.first().map_or(0, |s| s.delta.len());
        let mut header = vec!["k".to_string()];
        header.extend((1..=m).map(|i| format!("delta_{i}")));
        header.extend(["z", "S", "e_norm", "e_attack_norm", "gamma"].map(String::from));
        writeln!(out, "{}", header.join(","))?;
        for s in &self.steps {
            let mut row = vec![s.k.to_string()];
            row.extend(s.delta.iter().map(|&v| fmt_sig(v)));
            row.push(fmt_sig(s.z));
            row.push(fmt_sig(s.s));
            row.push(fmt_sig(s.e_norm));
            row.push(fmt_sig(s.e_attack_norm));
            row.push(s.gamma.map(fmt_sig).unwrap_or_default());
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Simulates steps `k = 1..=horizon` from `x_1 ~ N(0, R0)`, `xhat_1 = 0`
/// with the attack switched on at `k*`, while integrating the noise-driven
/// part `e^v_{k+1} = F e^v_k + v_k` and the attack-driven part
/// `e^d_{k+1} = F e^d_k - L Sigma^{1/2} d_k` from `e^v_{k*} = e_{k*}`,
/// `e^d_{k*} = 0`. Checks `e = e^v + e^d` at every step.
pub fn split_error_trajectories(
    model: &LtiModel,
    design: &KalmanDesign,
    plan: &AttackPlan,
    horizon: u64,
    seed: u64,
) -> Result<SplitTrajectories, AttackError> {
    if horizon < plan.k_star {
        return Err(AttackError::InvalidPlan(format!(
            "horizon {horizon} ends before the attack starts at {}",
            plan.k_star
        )));
    }
    if plan.direction.len() != model.m() {
        return Err(AttackError::InvalidPlan(
            "direction length differs from m".into(),
        ));
    }
    let n = model.n();
    let mut state = SimState::new(model, seed);
    let mut detector = Detector::new(plan.detector);
    let u = Vector::zeros(model.l());
    let l_sqrt = &design.l * &design.sigma_sqrt;

    let mut e_full = Vec::with_capacity(horizon as usize);
    let mut e_noise = Vec::with_capacity(horizon as usize);
    let mut e_attack = Vec::with_capacity(horizon as usize);
    let mut steps = Vec::with_capacity(horizon as usize);
    let mut alarms_after_start = Vec::new();
    let mut ev = Vector::zeros(n);
    let mut ed = Vector::zeros(n);
    let mut first_phase = None;
    let mut diverged = false;

    for k in 1..=horizon {
        if k == plan.k_star {
            ev = state.e.clone();
            ed = Vector::zeros(n);
        }
        let attacked = k >= plan.k_star;
        let (ev_k, ed_k) = if attacked {
            (ev.clone(), ed.clone())
        } else {
            (state.e.clone(), Vector::zeros(n))
        };
        let gap = (&state.e - &ev_k - &ed_k).amax();
        if gap > SUPERPOSITION_TOL * state.e.amax().max(1.0) {
            return Err(AttackError::SuperpositionViolated { k, gap });
        }

        let s_prev = detector.statistic();
        let d = plan.free_vector(k, s_prev)?;
        if attacked && k == plan.k_star {
            first_phase = Some(d.clone());
        }
        let noise = state.draw_noise(model);
        let delta = if attacked {
            -(model.c() * &state.e) - &noise.eta + &design.sigma_sqrt * &d
        } else {
            Vector::zeros(model.m())
        };
        let v = noise.v.clone();
        e_full.push(state.e.clone());
        e_noise.push(ev_k);
        let ed_norm = ed_k.norm();
        e_attack.push(ed_k);
        let e_norm = state.e.norm();

        let rec = state.step_with_noise(model, design, &u, &delta, noise)?;
        let det = detector.observe(rec.z)?;
        if det.alarm {
            // the CUSUM reports an alarm one step late, at k - 1
            let idx = match plan.detector {
                DetectorConfig::Cusum(_) => k - 1,
                DetectorConfig::Chi2(_) => k,
            };
            if idx >= plan.k_star {
                alarms_after_start.push(idx);
            }
        }
        steps.push(AttackStep {
            k,
            delta,
            z: rec.z,
            s: det.s,
            alarm: det.alarm,
            e_norm,
            e_attack_norm: ed_norm,
            gamma: None,
        });

        if attacked {
            ev = model.f() * &ev + v;
            ed = model.f() * &ed - &l_sqrt * &d;
        }
        if state.e.norm() > DIVERGENCE_CAP {
            diverged = true;
            break;
        }
    }
    // an unreset crossing at the last step is an alarm too
    if let (DetectorConfig::Cusum(c), Detector::Cusum { state: s, .. }) = (plan.detector, &detector)
    {
        if s.s > c.tau && !diverged {
            alarms_after_start.push(s.k);
        }
    }

    let envelope = match plan.detector {
        DetectorConfig::Chi2(c) => chi2_bound_envelope(
            design,
            model.f(),
            c.alpha,
            plan.k_star,
            (horizon - plan.k_star) as usize,
        ),
        DetectorConfig::Cusum(c) => {
            let tau_bar = first_phase.unwrap_or_else(|| Vector::zeros(model.m()));
            cusum_bound_envelope(
                design,
                model.f(),
                c.b,
                first_phase_norm(design, &tau_bar),
                plan.k_star,
                (horizon - plan.k_star) as usize,
            )
        }
    };
    let envelope = match envelope {
        Ok(env) => Some(env),
        Err(AttackError::Numerics(NumericsError::SpectralRadiusNotLessThanOne { .. })) => None,
        Err(other) => return Err(other),
    };
    if let Some(env) = &envelope {
        for s in &mut steps {
            s.gamma = env.gamma(s.k);
        }
    }
    Ok(SplitTrajectories {
        k_star: plan.k_star,
        e_full,
        e_noise,
        e_attack,
        steps,
        envelope,
        alarms_after_start,
        diverged,
    })
}
