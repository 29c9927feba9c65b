use thiserror::Error;

use crate::supervisor::Phase;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not a rotation (|RᵀR - I| = {orthogonality:.3e}, det = {det:.9})")]
    NotARotation { orthogonality: f64, det: f64 },

    #[error("angle-axis parameterization is singular at theta = {0} (must be < pi)")]
    AngleAtPi(f64),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("curve line {line}: {message}")]
    CurveParse { line: usize, message: String },

    #[error("curve needs at least 2 distinct points, got {0}")]
    CurveTooShort(usize),

    #[error("curve points {0} and {1} coincide")]
    DegenerateSegment(usize, usize),

    #[error("invalid gains: {0}")]
    InvalidGains(String),

    #[error("singular configuration in {task} task (denominator {denominator:.3e})")]
    Singular { task: &'static str, denominator: f64 },

    #[error("{phase:?} phase at s_p = {s_p:.4} mm: {source}")]
    Control {
        phase: Phase,
        s_p: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("protocol error: {reason} (line: {line:?})")]
    Protocol { line: String, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
