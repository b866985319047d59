use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point is behind the camera or outside the model field of view")]
    PointBehindCamera,
    #[error("distortion inversion did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("degenerate linear system (condition number {condition:e})")]
    DegenerateSystem { condition: f64 },
    #[error("insufficient observations: need {required}, got {available}")]
    InsufficientObservations { required: usize, available: usize },
    #[error("image size {got:?} does not match calibration {expected:?}")]
    ImageSizeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("timestamp {got} is not after previous timestamp {previous}")]
    NonMonotonicTimestamp { previous: f64, got: f64 },
    #[error("missing calibration file {0}")]
    MissingCalibration(PathBuf),
    #[error("dataset at {0} has no frames")]
    EmptySequence(PathBuf),
    #[error("left and right streams cannot be paired: {0}")]
    UnpairableStreams(String),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("trajectories have no temporally overlapping poses")]
    NoOverlap,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}
