use std::io;

use thiserror::Error;

use crate::types::LabelId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate motion model: scale {rho:e} too small to decouple")]
    DegenerateModel { rho: f64 },

    #[error("normal flow has zero magnitude")]
    ZeroNormalFlow,

    #[error("time-surface gradient undefined at ({x}, {y})")]
    UndefinedGradient { x: usize, y: usize },

    #[error("object region {object} contains no lattice points")]
    EmptyRegion { object: usize },

    #[error("format error at record {record}: {message}")]
    Format { record: usize, message: String },

    #[error("need at least {needed} observations, got {got}")]
    InsufficientObservations { needed: usize, got: usize },

    #[error("non-finite value encountered during {0}")]
    NonFinite(&'static str),

    #[error("label {0} has no motion model")]
    MissingModel(LabelId),

    #[error("window contains no observations")]
    EmptyWindow,

    #[error("label {0} is not active")]
    InactiveLabel(LabelId),

    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("config error: missing key `{0}`")]
    MissingKey(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn format(record: usize, message: impl Into<String>) -> Self {
        Error::Format {
            record,
            message: message.into(),
        }
    }
}
