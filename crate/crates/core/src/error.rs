use thiserror::Error;

/// Invalid parameters or configuration input.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("configuration error: {message}")]
pub struct ConfigError {
    pub message: String,
}

impl ConfigError {
    pub fn new(message: impl Into<String>) -> Self {
        Self { message: message.into() }
    }
}

/// Failures of wave-function evaluation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    /// `|Ψ|` cancels to below the node floor, so `∇Ψ/Ψ` is noise.
    #[error("velocity undefined at a node (relative log-magnitude {relative_log_magnitude:.3})")]
    NodeSingularity { relative_log_magnitude: f64 },
    /// Every conditional coefficient vanished.
    #[error("degenerate collapse: detected position lies on a global node")]
    DegenerateCollapse,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplingError {
    /// Rejection ratio above one: the envelope bound is broken.
    #[error("rejection envelope violated (ratio {ratio})")]
    EnvelopeViolation { ratio: f64 },
    #[error("sampler mode does not match the requested operation: {0}")]
    WrongMode(&'static str),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegrationError {
    /// The controller asked for a step below `dt_min`.
    #[error("step size underflow at t = {t:e} s, q = {q:?}")]
    Stiffness { t: f64, q: Vec<f64> },
    #[error("contract violation: {0}")]
    ContractViolation(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("sample too small: need at least {required}, got {actual}")]
    UndersizedSample { required: usize, actual: usize },
    #[error("binning mismatch: {0}")]
    BinningMismatch(String),
    #[error("invalid histogram range or bin count")]
    InvalidRange,
    #[error("no records match the selection")]
    EmptySelection,
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Crate-level error used by the orchestration layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Integration(#[from] IntegrationError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
