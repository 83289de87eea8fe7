use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("cannot project a zero-norm vector onto the sphere")]
    DegenerateProjection,

    #[error("activation {activation} has no derivative of order {order}")]
    UnsupportedDerivative { activation: &'static str, order: u8 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("value outside domain: {0}")]
    DomainError(String),

    #[error("run diverged at t = {t}, particle {particle}")]
    DivergedRun { t: f64, particle: usize },

    #[error("time step {dt} violates the CFL bound; admissible step is {admissible}")]
    CflError { dt: f64, admissible: f64 },

    #[error("density fields live on different grids")]
    GridMismatch,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("snapshot window is not equispaced: {0}")]
    SnapshotSpacing(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("format error: {0}")]
    Format(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}
