use thiserror::Error;

/// Errors produced anywhere in the calibration stack.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { expected: Vec<usize>, actual: Vec<usize> },

    #[error("invalid shape {0:?}: {1}")]
    InvalidShape(Vec<usize>, &'static str),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix dimension {dim} exceeds cap {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal residual {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    #[error("degenerate classification: {0}")]
    DegenerateClassification(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("training stalled: final loss {loss:.4} is not below threshold {threshold}")]
    TrainingStalled { loss: f64, threshold: f64 },

    #[error("non-differentiable metric: Jacobians require soft_area")]
    NonDifferentiableMetric,

    #[error("non-finite metric value at beta = {beta}")]
    NonFiniteMetric { beta: f64 },

    #[error("negative weight {weight} at index {index}")]
    NegativeWeight { index: usize, weight: f64 },

    #[error("empty partition: {0}")]
    EmptyPartition(&'static str),

    #[error("class {0} absent from {1}")]
    ClassAbsent(&'static str, &'static str),

    #[error("split failure rate {rate:.3} exceeds limit {limit}")]
    TooManyFailures { rate: f64, limit: f64 },

    #[error("bad magic: expected CTX1, got {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported dtype tag {0}")]
    UnsupportedDtype(u8),

    #[error("truncated header")]
    TruncatedHeader,

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("trailing bytes after tensor: {0}")]
    TrailingBytes(usize),

    #[error("record count mismatch: trailer says {declared}, found {found}")]
    RecordCount { declared: u64, found: usize },

    #[error("count mismatch: {0} entries against {1}")]
    CountMismatch(usize, usize),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
