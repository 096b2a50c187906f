use thiserror::Error;

/// Errors produced by the simulation pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("state diverged (non-finite component) at tau = {tau}")]
    Divergence { tau: f64 },

    #[error("adaptive step underflow at tau = {tau} (step {step:e})")]
    StepUnderflow { tau: f64, step: f64 },

    #[error("trajectory is empty")]
    EmptyTrajectory,

    #[error("series too short: need at least {needed} samples, got {got}")]
    SeriesTooShort { needed: usize, got: usize },

    #[error("non-uniform sampling: {0}")]
    NonUniformSampling(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("steady-state singularity: {0}")]
    Singular(String),

    #[error("no transition in [{lo}, {hi}]: both endpoints classify as {label}")]
    NoTransition { lo: f64, hi: f64, label: String },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
