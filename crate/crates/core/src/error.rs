use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid {nx}x{ny} too small for a stencil of order {order}")]
    GridTooSmall { nx: usize, ny: usize, order: usize },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("time step {dt} exceeds the stability limit; allowed dt <= {allowed}")]
    Cfl { dt: f64, allowed: f64 },

    #[error("non-finite value in `{what}` at step {step}")]
    NonFinite { what: &'static str, step: usize },

    #[error("surface-pressure Poisson solve failed: relative residual {residual:e}")]
    PoissonNotConverged { residual: f64 },

    #[error("observation time index {index} outside trajectory of {len} states")]
    ObsTimeOutOfRange { index: usize, len: usize },

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("negative curvature {curvature:e} at inner iteration {iteration}")]
    NegativeCurvature { iteration: usize, curvature: f64 },

    #[error("Picard iteration diverged at n={iteration}: t* too large (residuals {residuals:?})")]
    PicardDiverged { iteration: usize, residuals: Vec<f64> },

    #[error("config line {line}: key `{key}`: {reason}")]
    Config { line: usize, key: String, reason: String },

    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }

    /// Short machine-readable tag, used by the CLI error line and the C API.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::GridTooSmall { .. } | Error::InvalidGrid(_) => "grid",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::InvalidParameter { .. } => "invalid_parameter",
            Error::Cfl { .. } => "cfl",
            Error::NonFinite { .. } => "non_finite",
            Error::PoissonNotConverged { .. } => "poisson",
            Error::ObsTimeOutOfRange { .. } => "obs_time",
            Error::CheckpointMismatch(_) => "checkpoint",
            Error::NegativeCurvature { .. } => "negative_curvature",
            Error::PicardDiverged { .. } => "picard_diverged",
            Error::Config { .. } => "config",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
        }
    }
}
