use thiserror::Error;

use crate::analysis::Trajectory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("time {t} precedes exemplar birth time {birth}")]
    BeforeBirth { t: f64, birth: f64 },

    #[error("category `{0}` has no live weight")]
    EmptyCategory(String),

    #[error("category `{0}` is extinct")]
    CategoryExtinct(String),

    #[error("no finite equilibrium dispersion: alpha + beta = {0} lies outside (0, 2)")]
    NoEquilibrium(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("all category densities are zero at the production point")]
    AllZeroDensity,

    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("integration failure at t = {time}: {reason}")]
    IntegrationFailure { time: f64, reason: String },

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error("parse error in {source_name}: {message}")]
    Parse { source_name: String, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

/// An engine failure together with everything recorded before it.
#[derive(Debug, Clone)]
pub struct RunFailure {
    pub error: Error,
    pub partial: Box<Trajectory>,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} (partial trajectory has {} samples)",
            self.error,
            self.partial.times.len()
        )
    }
}

impl std::error::Error for RunFailure {}
