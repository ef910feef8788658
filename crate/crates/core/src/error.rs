use thiserror::Error;

/// Errors raised across the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("invalid timing: {0}")]
    InvalidTiming(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("numerical failure at iteration {iteration}: {what}")]
    NumericalFailure { iteration: usize, what: String },
    #[error("action space too large: N = {n} exceeds the enumeration limit of {limit}")]
    ActionSpaceTooLarge { n: usize, limit: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable variant name for machine-readable reporting.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::DegenerateGeometry(_) => "degenerate_geometry",
            Error::InvalidTiming(_) => "invalid_timing",
            Error::Shape(_) => "shape",
            Error::NumericalFailure { .. } => "numerical_failure",
            Error::ActionSpaceTooLarge { .. } => "action_space_too_large",
            Error::Config(_) => "config",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
