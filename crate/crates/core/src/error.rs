//! Error type shared by the model, integrator, solver and calibration layers.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A state, parameter or control value was NaN or infinite.
    NonFinite { what: &'static str },
    /// A control level fell outside the admissible interval.
    ControlOutOfBounds { value: f64, lo: f64, hi: f64 },
    /// Model parameters violate their invariants.
    InvalidParameters { reason: String },
    /// Initial conditions violate their invariants.
    InvalidInitialConditions { reason: String },
    /// A time grid or control grid is malformed.
    InvalidGrid { reason: String },
    /// The integrator produced a non-finite state.
    NonFiniteState { step: usize },
    /// An optimal-control problem specification is malformed.
    InvalidSpec { reason: String },
    /// Calibration targets are malformed.
    InvalidTargets { reason: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NonFinite { what } => write!(f, "non-finite value in {what}"),
            Error::ControlOutOfBounds { value, lo, hi } => {
                write!(f, "control level {value} outside [{lo}, {hi}]")
            }
            Error::InvalidParameters { reason } => write!(f, "invalid parameters: {reason}"),
            Error::InvalidInitialConditions { reason } => {
                write!(f, "invalid initial conditions: {reason}")
            }
            Error::InvalidGrid { reason } => write!(f, "invalid grid: {reason}"),
            Error::NonFiniteState { step } => {
                write!(f, "integration produced a non-finite state at step {step}")
            }
            Error::InvalidSpec { reason } => write!(f, "invalid problem spec: {reason}"),
            Error::InvalidTargets { reason } => write!(f, "invalid calibration targets: {reason}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
