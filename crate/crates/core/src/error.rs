use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input: {0}")]
    NonFinite(f64),

    #[error("invalid format: {0}")]
    InvalidFormat(String),

    #[error("invalid range: lo {lo} > hi {hi}")]
    InvalidRange { lo: f64, hi: f64 },

    #[error("range unrepresentable: {what} needs {needed} integer bits, word has {available}")]
    RangeUnrepresentable {
        what: String,
        needed: u32,
        available: u32,
    },

    #[error("accumulator overflow")]
    AccumulatorOverflow,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("empty calibration set")]
    EmptyCalibration,

    #[error("no ground truth boxes")]
    NoGroundTruth,

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("malformed model file at byte {offset}: {msg}")]
    Malformed { offset: u64, msg: String },

    #[error("model file version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: String, found: String },

    #[error("image decode error: {0}")]
    Image(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the arithmetic itself rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::AccumulatorOverflow | Error::NonFinite(_))
    }
}
