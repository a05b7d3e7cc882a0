use thiserror::Error;

use crate::node::SimTape;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite state")]
    NonFiniteState,

    #[error("step exceeds delay: dt={dt} > smallest nonzero delay {delay}")]
    StepExceedsDelay { dt: f64, delay: f64 },

    #[error("divergence at t={t}")]
    Divergence { t: f64 },

    /// Raised by the neural ODE integrator; carries the tape up to the failing step.
    #[error("divergence at sample step {step}")]
    NodeDivergence { step: usize, tape: Box<SimTape> },

    #[error("empty training window: t_drop={t_drop} >= t_train_end={t_train_end}")]
    EmptyTrainingWindow { t_drop: f64, t_train_end: f64 },

    #[error("mesh too coarse: M={m} (need M >= 2)")]
    MeshTooCoarse { m: usize },

    #[error("delay out of range: tau={tau} not in [0, {max}]")]
    DelayOutOfRange { tau: f64, max: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("trajectory too short: {have} samples, need {need}")]
    TrajectoryTooShort { have: usize, need: usize },

    #[error("no Hopf in this parameterization: |b|={b} <= |a|={a}")]
    NoHopf { a: f64, b: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Numerical failures (as opposed to bad input or I/O).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteState | Error::Divergence { .. } | Error::NodeDivergence { .. }
        )
    }
}
