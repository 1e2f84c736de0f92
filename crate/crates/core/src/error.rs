use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("qubit count mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("array length {0} is not 4^n for a supported n")]
    BadLength(usize),

    #[error("{what}: n = {n} exceeds the dense cap of {cap} qubits")]
    TooManyQubits { what: &'static str, n: usize, cap: usize },

    #[error("invalid Pauli label {0:?}")]
    BadLabel(String),

    #[error("parameter out of range: {0}")]
    OutOfRange(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("invalid instrument: {0}")]
    InvalidInstrument(String),

    #[error("invalid scheme: {0}")]
    InvalidScheme(String),

    #[error("history tree too large: at least {estimate} leaves (cap {cap})")]
    TreeTooLarge { estimate: usize, cap: usize },

    #[error("zero-probability branch (denominator {0:e})")]
    ZeroProbability(f64),

    #[error("invalid cover: {0}")]
    InvalidCover(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
