//! Model-based residual detectors for linear time-invariant systems with
//! Gaussian noise.

pub mod attacks;
pub mod detectors;
pub mod harness;
pub mod numerics;
pub mod plant;
pub mod tuning;
