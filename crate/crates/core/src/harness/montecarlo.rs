//! Monte Carlo estimation on unattacked residual streams.
//!
//! Trial `i` uses seed `seed + i`, owns its plant, filter state, and
//! detector, and is reduced in trial order, so results do not depend on how
//! rayon schedules the work.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::detectors::{Detector, DetectorConfig, DetectorRecord};
use crate::numerics::{Matrix, Vector};
use crate::plant::{warm_up, KalmanDesign, LtiModel, DEFAULT_WARM_UP_STEPS};

/// Default detector steps per false-alarm estimate.
pub const DEFAULT_MC_STEPS: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunSettings {
    /// Detector steps per trial.
    pub horizon: u64,
    pub trials: usize,
    pub seed: u64,
    pub warm_up_steps: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            horizon: DEFAULT_MC_STEPS,
            trials: 1,
            seed: 0,
            warm_up_steps: DEFAULT_WARM_UP_STEPS,
        }
    }
}

impl RunSettings {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.horizon < 1 {
            return Err(HarnessError::Config("horizon must be at least 1".into()));
        }
        if self.trials < 1 {
            return Err(HarnessError::Config("trials must be at least 1".into()));
        }
        if self.warm_up_steps < 1 {
            return Err(HarnessError::Config(
                "warmUpSteps must be at least 1".into(),
            ));
        }
        Ok(())
    }

    fn trial_seed(&self, i: usize) -> u64 {
        self.seed.wrapping_add(i as u64)
    }
}

/// Empirical false-alarm rate with two estimators.
///
/// Run lengths are gaps between consecutive alarm indices, the first
/// measured from index 0, so a detector that alarms at `k~ = 4, 8, 12`
/// has run lengths `4, 4, 4`. With the CUSUM reset step this makes both
/// estimators target `1 / (ARL + 1)` per detector step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FalseAlarmEstimate {
    pub rate_by_count: f64,
    pub rate_by_run_length: f64,
    /// Delta-method standard error of the rate from the run-length sample.
    pub stderr: f64,
    pub total_steps: u64,
    pub alarms: u64,
    pub mean_run_length: f64,
}

struct TrialOutcome {
    steps: u64,
    alarms: Vec<u64>,
}

fn run_trial(
    model: &LtiModel,
    design: &KalmanDesign,
    detector: DetectorConfig,
    settings: &RunSettings,
    seed: u64,
) -> Result<TrialOutcome, HarnessError> {
    let mut state = warm_up(model, design, settings.warm_up_steps, seed)?;
    let mut det = Detector::new(detector);
    let u = Vector::zeros(model.l());
    let delta = Vector::zeros(model.m());
    for _ in 0..settings.horizon {
        let rec = state.step(model, design, &u, &delta)?;
        det.observe(rec.z)?;
    }
    Ok(TrialOutcome {
        steps: settings.horizon,
        alarms: det.alarms().to_vec(),
    })
}

pub fn estimate_false_alarm_rate(
    model: &LtiModel,
    design: &KalmanDesign,
    detector: DetectorConfig,
    settings: &RunSettings,
) -> Result<FalseAlarmEstimate, HarnessError> {
    settings.validate()?;
    let outcomes: Vec<TrialOutcome> = (0..settings.trials)
        .into_par_iter()
        .map(|i| run_trial(model, design, detector, settings, settings.trial_seed(i)))
        .collect::<Result<_, _>>()?;

    let total_steps: u64 = outcomes.iter().map(|o| o.steps).sum();
    let mut run_lengths = Vec::new();
    for o in &outcomes {
        let mut last = 0;
        for &a in &o.alarms {
            run_lengths.push((a - last) as f64);
            last = a;
        }
    }
    let alarms = run_lengths.len() as u64;
    let rate_by_count = alarms as f64 / total_steps as f64;
    let (mean, sd) = mean_and_sd(&run_lengths);
    let rate_by_run_length = if alarms > 0 { 1.0 / mean } else { 0.0 };
    let stderr = if alarms >= 2 {
        sd / (mean * mean * (alarms as f64).sqrt())
    } else {
        (rate_by_count * (1.0 - rate_by_count) / total_steps as f64).sqrt()
    };
    Ok(FalseAlarmEstimate {
        rate_by_count,
        rate_by_run_length,
        stderr,
        total_steps,
        alarms,
        mean_run_length: if alarms > 0 { mean } else { f64::INFINITY },
    })
}

fn mean_and_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One detector stream after warm-up, for export.
pub fn simulate_stream(
    model: &LtiModel,
    design: &KalmanDesign,
    detector: DetectorConfig,
    settings: &RunSettings,
) -> Result<Vec<DetectorRecord>, HarnessError> {
    settings.validate()?;
    let mut state = warm_up(model, design, settings.warm_up_steps, settings.seed)?;
    let mut det = Detector::new(detector);
    let u = Vector::zeros(model.l());
    let delta = Vector::zeros(model.m());
    (0..settings.horizon)
        .map(|_| {
            let rec = state.step(model, design, &u, &delta)?;
            Ok(det.observe(rec.z)?)
        })
        .collect()
}

/// Sample moments of the unattacked residual and distance streams.
#[derive(Debug, Clone)]
pub struct ResidualStatistics {
    pub steps: u64,
    pub z_mean: f64,
    pub z_variance: f64,
    pub r_mean: Vector,
    pub r_covariance: Matrix,
}

/// Streams `steps` residuals after `warm_up_steps` and accumulates moments
/// with Welford updates.
pub fn residual_statistics(
    model: &LtiModel,
    design: &KalmanDesign,
    steps: u64,
    warm_up_steps: usize,
    seed: u64,
) -> Result<ResidualStatistics, HarnessError> {
    if steps < 2 {
        return Err(HarnessError::Config("need at least two samples".into()));
    }
    let m = model.m();
    let mut state = warm_up(model, design, warm_up_steps, seed)?;
    let u = Vector::zeros(model.l());
    let delta = Vector::zeros(m);
    let (mut z_mean, mut z_m2) = (0.0, 0.0);
    let mut r_mean = Vector::zeros(m);
    let mut r_m2 = Matrix::zeros(m, m);
    for i in 1..=steps {
        let rec = state.step(model, design, &u, &delta)?;
        let w = 1.0 / i as f64;
        let dz = rec.z - z_mean;
        z_mean += dz * w;
        z_m2 += dz * (rec.z - z_mean);
        let dr = &rec.r - &r_mean;
        r_mean += &dr * w;
        let dr2 = &rec.r - &r_mean;
        r_m2 += &dr * dr2.transpose();
    }
    let denom = (steps - 1) as f64;
    Ok(ResidualStatistics {
        steps,
        z_mean,
        z_variance: z_m2 / denom,
        r_mean,
        r_covariance: r_m2 / denom,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detectors::{Chi2Config, CusumConfig};
    use crate::harness::reactor_fixture;
    use crate::plant::design_filter;

    fn small(seed: u64, trials: usize) -> RunSettings {
        RunSettings {
            horizon: 20_000,
            trials,
            seed,
            warm_up_steps: 200,
        }
    }

    #[test]
    fn unreachable_threshold_never_alarms() {
        let model = reactor_fixture();
        let design = design_filter(&model).unwrap();
        let det = DetectorConfig::Cusum(CusumConfig::new(6.0, 1e9, 3).unwrap());
        let est = estimate_false_alarm_rate(&model, &design, det, &small(1, 1)).unwrap();
        assert_eq!(est.alarms, 0);
        assert_eq!(est.rate_by_count, 0.0);
        assert_eq!(est.rate_by_run_length, 0.0);
    }

    #[test]
    fn deterministic_and_split_invariant() {
        let model = reactor_fixture();
        let design = design_filter(&model).unwrap();
        let det = DetectorConfig::Chi2(Chi2Config::new(6.25).unwrap());
        let a = estimate_false_alarm_rate(&model, &design, det, &small(5, 3)).unwrap();
        let b = estimate_false_alarm_rate(&model, &design, det, &small(5, 3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.total_steps, 60_000);
        // chi-squared(3) tail at 6.25 is about 0.1
        assert!((a.rate_by_count - 0.1).abs() < 0.01);
    }

    #[test]
    fn estimators_agree() {
        let model = reactor_fixture();
        let design = design_filter(&model).unwrap();
        let det = DetectorConfig::Cusum(CusumConfig::new(6.0, 4.1002, 3).unwrap());
        let est = estimate_false_alarm_rate(&model, &design, det, &small(9, 2)).unwrap();
        assert!(est.alarms > 100);
        assert!((est.rate_by_count - est.rate_by_run_length).abs() < 2.0 * est.stderr);
    }

    #[test]
    fn invalid_settings() {
        let model = reactor_fixture();
        let design = design_filter(&model).unwrap();
        let det = DetectorConfig::Chi2(Chi2Config::new(1.0).unwrap());
        let mut s = small(0, 1);
        s.trials = 0;
        assert!(estimate_false_alarm_rate(&model, &design, det, &s).is_err());
        s.trials = 1;
        s.horizon = 0;
        assert!(estimate_false_alarm_rate(&model, &design, det, &s).is_err());
    }

    #[test]
    fn stream_matches_estimate_alarm_count() {
        let model = reactor_fixture();
        let design = design_filter(&model).unwrap();
        let det = DetectorConfig::Cusum(CusumConfig::new(3.45, 3.3699, 3).unwrap());
        let s = small(4, 1);
        let stream = simulate_stream(&model, &design, det, &s).unwrap();
        let est = estimate_false_alarm_rate(&model, &design, det, &s).unwrap();
        assert_eq!(stream.len(), 20_000);
        assert_eq!(stream.iter().filter(|r| r.alarm).count() as u64, est.alarms);
    }
}
