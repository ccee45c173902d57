//! CUSUM and chi-squared procedures over the distance-measure stream `z_k`.
//!
//! CUSUM, with `S_1 = 0`:
//!
//! ```text
//! S_k = max(0, S_{k-1} + z_k - b)   if S_{k-1} <= tau
//! S_k = 0, alarm at k~ = k - 1      if S_{k-1} >  tau
//! ```
//!
//! The `z_k` arriving on a reset transition is discarded, so every alarm
//! costs one extra step of dead time. The alarm index `k - 1` is the step
//! whose update pushed `S` above `tau`; [`CusumStep::crossed`] reports that
//! same event as soon as it happens, while [`CusumStep::alarm`] reports it
//! one step later as the recursion does.
//!
//! Chi-squared: alarm at `k` iff `z_k > alpha` (strict).

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectorError {
    #[error("distance measure must be non-negative, got {0}")]
    NegativeDistance(f64),
    #[error("invalid detector configuration: {0}")]
    InvalidConfig(String),
}

fn check_distance(z: f64) -> Result<(), DetectorError> {
    if z >= 0.0 {
        Ok(())
    } else {
        Err(DetectorError::NegativeDistance(z))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CusumConfig {
    pub b: f64,
    pub tau: f64,
    /// `b > m`, the condition for mean-square boundedness of `S`.
    pub strict_bias: bool,
    /// When false the threshold reset is skipped and `S` is a plain
    /// reflected random walk; no alarms are raised.
    pub reset: bool,
}

impl CusumConfig {
    /// `m` is the number of measured outputs.
    pub fn new(b: f64, tau: f64, m: usize) -> Result<Self, DetectorError> {
        if !(b > 0.0) || !b.is_finite() {
            return Err(DetectorError::InvalidConfig(format!(
                "bias b = {b} must be positive"
            )));
        }
        if !(tau > 0.0) {
            return Err(DetectorError::InvalidConfig(format!(
                "threshold tau = {tau} must be positive"
            )));
        }
        Ok(Self {
            b,
            tau,
            strict_bias: b > m as f64,
            reset: true,
        })
    }

    pub fn without_reset(mut self) -> Self {
        self.reset = false;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CusumState {
    pub s: f64,
    /// Alarm indices `k~`, strictly increasing.
    pub alarms: Vec<u64>,
    /// Index of the last computed statistic, `S_k`.
    pub k: u64,
}

impl Default for CusumState {
    fn default() -> Self {
        Self {
            s: 0.0,
            alarms: Vec::new(),
            k: 1,
        }
    }
}

/// Result of one CUSUM transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CusumStep {
    pub k: u64,
    pub z: f64,
    pub s: f64,
    /// Reset transition: an alarm at `k - 1` was recorded.
    pub alarm: bool,
    /// `S_k > tau` right after this update.
    pub crossed: bool,
}

impl CusumState {
    /// Whether the next transition will be a reset (the last statistic is
    /// above threshold).
    pub fn pending_alarm(&self, cfg: &CusumConfig) -> bool {
        cfg.reset && self.s > cfg.tau
    }

    pub fn update(&mut self, cfg: &CusumConfig, z: f64) -> Result<CusumStep, DetectorError> {
        check_distance(z)?;
        let prev = self.s;
        self.k += 1;
        let alarm = cfg.reset && prev > cfg.tau;
        if alarm {
            self.alarms.push(self.k - 1);
            self.s = 0.0;
        } else {
            self.s = (prev + z - cfg.b).max(0.0);
        }
        Ok(CusumStep {
            k: self.k,
            z,
            s: self.s,
            alarm,
            crossed: cfg.reset && self.s > cfg.tau,
        })
    }
}

/// Functional form of one CUSUM transition.
pub fn cusum_update(
    cfg: &CusumConfig,
    state: &CusumState,
    z: f64,
) -> Result<(CusumState, bool), DetectorError> {
    let mut next = state.clone();
    let step = next.update(cfg, z)?;
    Ok((next, step.alarm))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Chi2Config {
    pub alpha: f64,
}

impl Chi2Config {
    pub fn new(alpha: f64) -> Result<Self, DetectorError> {
        if !(alpha > 0.0) {
            return Err(DetectorError::InvalidConfig(format!(
                "threshold alpha = {alpha} must be positive"
            )));
        }
        Ok(Self { alpha })
    }
}

/// `z > alpha`.
pub fn chi2_update(cfg: &Chi2Config, z: f64) -> Result<bool, DetectorError> {
    check_distance(z)?;
    Ok(z > cfg.alpha)
}

/// Which procedure a detector instance runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DetectorConfig {
    Cusum(CusumConfig),
    Chi2(Chi2Config),
}

/// One row of the detector output stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorRecord {
    pub k: u64,
    pub z: f64,
    /// CUSUM statistic; for the chi-squared procedure this is `z` itself.
    pub s: f64,
    pub alarm: bool,
}

/// Running detector of either kind, consuming `z` and emitting records.
#[derive(Debug, Clone)]
pub enum Detector {
    Cusum {
        cfg: CusumConfig,
        state: CusumState,
    },
    Chi2 {
        cfg: Chi2Config,
        k: u64,
        alarms: Vec<u64>,
    },
}

impl Detector {
    pub fn new(cfg: DetectorConfig) -> Self {
        match cfg {
            DetectorConfig::Cusum(cfg) => Detector::Cusum {
                cfg,
                state: CusumState::default(),
            },
            DetectorConfig::Chi2(cfg) => Detector::Chi2 {
                cfg,
                k: 0,
                alarms: Vec::new(),
            },
        }
    }

    pub fn observe(&mut self, z: f64) -> Result<DetectorRecord, DetectorError> {
        match self {
            Detector::Cusum { cfg, state } => {
                let step = state.update(cfg, z)?;
                Ok(DetectorRecord {
                    k: step.k,
                    z,
                    s: step.s,
                    alarm: step.alarm,
                })
            }
            Detector::Chi2 { cfg, k, alarms } => {
                let alarm = chi2_update(cfg, z)?;
                *k += 1;
                if alarm {
                    alarms.push(*k);
                }
                Ok(DetectorRecord {
                    k: *k,
                    z,
                    s: z,
                    alarm,
                })
            }
        }
    }

    pub fn alarms(&self) -> &[u64] {
        match self {
            Detector::Cusum { state, .. } => &state.alarms,
            Detector::Chi2 { alarms, .. } => alarms,
        }
    }

    /// Current CUSUM statistic (`S_{k-1}` from the point of view of the next
    /// update); zero for the stateless chi-squared procedure.
    pub fn statistic(&self) -> f64 {
        match self {
            Detector::Cusum { state, .. } => state.s,
            Detector::Chi2 { .. } => 0.0,
        }
    }
}

/// Writes a detector stream as CSV with columns `k,z,S,alarm`.
pub fn write_stream_csv<W: Write>(mut out: W, records: &[DetectorRecord]) -> io::Result<()> {
    writeln!(out, "k,z,S,alarm")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{}",
            r.k,
            crate::harness::fmt_sig(r.z),
            crate::harness::fmt_sig(r.s),
            u8::from(r.alarm)
        )?;
    }
    Ok(())
}
