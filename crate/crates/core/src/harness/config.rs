//! TOML experiment configuration.
//!
//! ```toml
//! [model]
//! preset = "reactor"          # or inline F, G, C, R0, R1, R2 row arrays
//!
//! [detector]
//! kind = "cusum"              # or "chi2"
//! b = 6.0
//! tau = 4.1002                # or targetRate = 0.02 to tune
//!
//! [attack]                    # optional
//! directionKind = "worstCase" # "uniform" | "worstCase" | "custom"
//! startStep = 2000
//!
//! [run]
//! horizon = 1000000
//! trials = 1
//! seed = 7
//! warmUpSteps = 1000
//! output = "out.csv"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::montecarlo::RunSettings;
use super::{reactor_fixture, HarnessError};
use crate::attacks::{AttackPlan, DirectionKind, DEFAULT_ATTACK_START};
use crate::detectors::{Chi2Config, CusumConfig, DetectorConfig};
use crate::plant::{KalmanDesign, LtiModel, ModelConfig, DEFAULT_WARM_UP_STEPS};
use crate::tuning::{
    chi2_threshold, solve_cusum_threshold, TuningResult, DEFAULT_PARTITIONS, DEFAULT_RATE_TOL,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSection {
    Preset(ModelPreset),
    Inline(ModelConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelPreset {
    pub preset: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection::Preset(ModelPreset {
            preset: "reactor".into(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Cusum,
    Chi2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct DetectorSection {
    pub kind: DetectorKind,
    pub b: Option<f64>,
    pub tau: Option<f64>,
    pub alpha: Option<f64>,
    /// Tune `tau` (or `alpha`) to this false-alarm rate when not given.
    pub target_rate: Option<f64>,
    pub partitions: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum DirectionChoice {
    Uniform,
    WorstCase,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct AttackSection {
    pub direction_kind: DirectionChoice,
    /// Unit vector, required for `custom`.
    pub direction: Option<Vec<f64>>,
    #[serde(default = "default_start")]
    pub start_step: u64,
    #[serde(default = "default_intensity")]
    pub intensity: f64,
}

fn default_start() -> u64 {
    DEFAULT_ATTACK_START
}

fn default_intensity() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RunSection {
    pub horizon: u64,
    pub trials: usize,
    pub seed: u64,
    pub warm_up_steps: usize,
    pub output: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        let d = RunSettings::default();
        Self {
            horizon: d.horizon,
            trials: d.trials,
            seed: d.seed,
            warm_up_steps: DEFAULT_WARM_UP_STEPS,
            output: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub model: ModelSection,
    pub detector: Option<DetectorSection>,
    pub attack: Option<AttackSection>,
    #[serde(default)]
    pub run: RunSectionOpt,
}

/// `[run]` with every field optional; missing fields take the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RunSectionOpt {
    pub horizon: Option<u64>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub warm_up_steps: Option<usize>,
    pub output: Option<PathBuf>,
}

/// Detector after resolving any requested tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedDetector {
    pub config: DetectorConfig,
    pub tuning: Option<TuningResult>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.run_settings().validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn run(&self) -> RunSection {
        let d = RunSection::default();
        RunSection {
            horizon: self.run.horizon.unwrap_or(d.horizon),
            trials: self.run.trials.unwrap_or(d.trials),
            seed: self.run.seed.unwrap_or(d.seed),
            warm_up_steps: self.run.warm_up_steps.unwrap_or(d.warm_up_steps),
            output: self.run.output.clone(),
        }
    }

    pub fn run_settings(&self) -> RunSettings {
        let r = self.run();
        RunSettings {
            horizon: r.horizon,
            trials: r.trials,
            seed: r.seed,
            warm_up_steps: r.warm_up_steps,
        }
    }

    pub fn build_model(&self) -> Result<LtiModel, HarnessError> {
        match &self.model {
            ModelSection::Preset(p) if p.preset == "reactor" => Ok(reactor_fixture()),
            ModelSection::Preset(p) => Err(HarnessError::Config(format!(
                "unknown model preset {:?}",
                p.preset
            ))),
            ModelSection::Inline(m) => Ok(LtiModel::from_config(m)?),
        }
    }

    /// Turns `[detector]` into a concrete configuration for an `m`-output
    /// plant, running the tuner when only `targetRate` is given.
    pub fn resolve_detector(&self, m: usize) -> Result<ResolvedDetector, HarnessError> {
        let d = self
            .detector
            .as_ref()
            .ok_or_else(|| HarnessError::Config("missing [detector] section".into()))?;
        match d.kind {
            DetectorKind::Chi2 => {
                let alpha = match (d.alpha, d.target_rate) {
                    (Some(a), None) => a,
                    (None, Some(rate)) => chi2_threshold(m, rate)?,
                    _ => {
                        return Err(HarnessError::Config(
                            "chi2 detector needs exactly one of alpha, targetRate".into(),
                        ))
                    }
                };
                Ok(ResolvedDetector {
                    config: DetectorConfig::Chi2(Chi2Config::new(alpha)?),
                    tuning: None,
                })
            }
            DetectorKind::Cusum => {
                let b =
                    d.b.ok_or_else(|| HarnessError::Config("cusum detector needs b".into()))?;
                let (tau, tuning) = match (d.tau, d.target_rate) {
                    (Some(t), None) => (t, None),
                    (None, Some(rate)) => {
                        let n = d.partitions.unwrap_or(DEFAULT_PARTITIONS);
                        let res = solve_cusum_threshold(m, b, rate, n, DEFAULT_RATE_TOL)?;
                        (res.tau, Some(res))
                    }
                    _ => {
                        return Err(HarnessError::Config(
                            "cusum detector needs exactly one of tau, targetRate".into(),
                        ))
                    }
                };
                Ok(ResolvedDetector {
                    config: DetectorConfig::Cusum(CusumConfig::new(b, tau, m)?),
                    tuning,
                })
            }
        }
    }

    pub fn attack_plan(
        &self,
        model: &LtiModel,
        design: &KalmanDesign,
        detector: DetectorConfig,
    ) -> Result<Option<AttackPlan>, HarnessError> {
        let Some(a) = &self.attack else {
            return Ok(None);
        };
        let kind = match (a.direction_kind, &a.direction) {
            (DirectionChoice::Uniform, None) => DirectionKind::Uniform,
            (DirectionChoice::WorstCase, None) => DirectionKind::WorstCase,
            (DirectionChoice::Custom, Some(v)) => DirectionKind::Custom(v.clone()),
            (DirectionChoice::Custom, None) => {
                return Err(HarnessError::Config(
                    "custom direction needs `direction`".into(),
                ))
            }
            (_, Some(_)) => {
                return Err(HarnessError::Config(
                    "`direction` is only allowed with directionKind = \"custom\"".into(),
                ))
            }
        };
        let dir = kind.resolve(model, design)?;
        let plan = AttackPlan::new(detector, dir)?
            .starting_at(a.start_step)?
            .with_intensity(a.intensity)?;
        Ok(Some(plan))
    }
}
