//! Experiment orchestration: reactor fixture, Monte Carlo false-alarm
//! estimation, and the benchmark reproductions.

pub mod cli;
pub mod config;
pub mod experiments;
pub mod montecarlo;
pub mod output;

use thiserror::Error;

use crate::attacks::AttackError;
use crate::detectors::DetectorError;
use crate::numerics::{matrix_from_rows, Matrix, NumericsError};
use crate::plant::{LtiModel, PlantError};
use crate::tuning::TuningError;

pub use config::ExperimentConfig;
pub use experiments::{
    attack_experiment, boundedness_experiment, breakeven_rate, ratio_sweep, table1,
    AttackExperiment, AttackSettings, BoundednessTrace, RatioRow, Table1, Table1Cell,
    Table1Settings,
};
pub use montecarlo::{estimate_false_alarm_rate, FalseAlarmEstimate, RunSettings};
pub use output::fmt_sig;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Tuning(#[from] TuningError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl HarnessError {
    /// True for bad input (exit code 1); false for numerical failures that
    /// happen on valid input (exit code 2).
    pub fn is_validation(&self) -> bool {
        match self {
            HarnessError::Config(_) | HarnessError::Io(_) => true,
            HarnessError::Detector(_) => true,
            HarnessError::Tuning(TuningError::InvalidInput(_)) => true,
            HarnessError::Attack(AttackError::InvalidPlan(_)) => true,
            HarnessError::Plant(PlantError::InvalidModel(_))
            | HarnessError::Plant(PlantError::DimensionMismatch(_)) => true,
            _ => false,
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

/// Number of measured outputs of the reactor.
pub const REACTOR_OUTPUTS: usize = 3;

/// Linearized, discretized (h = 0.05) stirred-tank reactor with heat
/// exchanger: states (concentration, product, jacket and coolant
/// temperatures), three inlet inputs, first three states measured.
/// `R0 = R1 = I4`, `R2 = 0.01 I3`.
pub fn reactor_fixture() -> LtiModel {
    let f = matrix_from_rows(&[
        vec![0.8353, 0.0, 0.0, 0.0],
        vec![0.0, 0.8324, 0.0, 0.0031],
        vec![0.0, 0.0001, 0.1633, 0.0],
        vec![0.0, 0.0280, 0.0172, 0.9320],
    ])
    .expect("constant matrix");
    let g = matrix_from_rows(&[
        vec![0.0458, 0.0, 0.0],
        vec![0.0, 0.0457, 0.0],
        vec![0.0, 0.0, 0.0231],
        vec![0.0, 0.0007, 0.0006],
    ])
    .expect("constant matrix");
    let c = matrix_from_rows(&[
        vec![1.0, 0.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0, 0.0],
        vec![0.0, 0.0, 1.0, 0.0],
    ])
    .expect("constant matrix");
    let i4 = Matrix::identity(4, 4);
    let r2 = Matrix::identity(3, 3) * 0.01;
    LtiModel::new(f, g, c, i4.clone(), i4, r2).expect("reactor model is consistent")
}

/// Gain and residual covariance as printed alongside the reactor model
/// (four decimals).
pub fn reactor_printed_design() -> (Matrix, Matrix) {
    let l = matrix_from_rows(&[
        vec![0.8271, 0.0, 0.0],
        vec![0.0, 0.8243, 0.0002],
        vec![0.0, 0.0002, 0.1619],
        vec![0.0, 0.0481, 0.0543],
    ])
    .expect("constant matrix");
    let sigma = matrix_from_rows(&[
        vec![1.0169, 0.0, 0.0],
        vec![0.0, 1.0169, 0.0001],
        vec![0.0, 0.0001, 1.0105],
    ])
    .expect("constant matrix");
    (l, sigma)
}
