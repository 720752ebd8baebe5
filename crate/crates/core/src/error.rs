use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point is behind the camera (z = {z})")]
    PointBehindCamera { z: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{what} did not converge after {iterations} iterations")]
    NonConvergent { what: &'static str, iterations: usize },

    #[error("refinement window at ({x:.2}, {y:.2}) leaves the image")]
    OutOfBounds { x: f64, y: f64 },

    #[error("refinement window at ({x:.2}, {y:.2}) has no gradient energy")]
    FlatRegion { x: f64, y: f64 },

    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("need at least {needed} views, got {got}")]
    InsufficientViews { needed: usize, got: usize },

    #[error("ill-conditioned system: {0}")]
    IllConditioned(String),

    #[error("empty input")]
    EmptyInput,

    #[error("stereo baseline is zero")]
    ZeroBaseline,

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("failed to load detector backend: {0}")]
    BackendLoadFailure(String),

    #[error("inference failed: {0}")]
    InferenceFailure(String),

    #[error("field of view {0} deg outside (0, 180)")]
    InvalidFov(f64),

    #[error("disparity {disparity:.4} px below minimum {min:.4} px")]
    DisparityTooSmall { disparity: f64, min: f64 },

    #[error("synthetic target {index} is behind a camera")]
    TargetBehindCamera { index: usize },

    #[error("rectification requested but no calibration maps are loaded")]
    CalibrationMissing,

    #[error("row {row}: actual distance must be positive")]
    NonPositiveActual { row: usize },

    #[error("frame source exhausted: wanted {wanted} frames, got {got}")]
    SourceExhausted { wanted: usize, got: usize },

    #[error("{path}:{line}: node `{node}`: {message}")]
    Format {
        path: PathBuf,
        node: String,
        line: usize,
        message: String,
    },

    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Errors caused by the user's configuration rather than by the data fed through it.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::InvalidFov(_) | Error::CalibrationMissing | Error::BackendLoadFailure(_)
        )
    }
}
