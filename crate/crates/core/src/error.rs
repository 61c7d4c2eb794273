use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{value} is not prime")]
    NotPrime { value: String },

    #[error("matrix is not invertible modulo {modulus}")]
    NotInvertible { modulus: u64 },

    #[error("ring mismatch: ({0}, {1}) vs ({2}, {3})")]
    RingMismatch(u32, u32, u32, u32),

    #[error("enumeration of {requested} elements exceeds the size guard of {limit}")]
    SizeGuard { requested: u128, limit: u64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("level {level} too low: {reason}")]
    LevelTooLow { level: u32, reason: String },

    #[error("tail fit rejected: {0}")]
    FitRejected(String),

    #[error("closure audit failed: {0}")]
    ClosureAudit(String),

    #[error("matrix not in the projection of the arboreal group")]
    NotInProjection,

    #[error("series has an uncovered or divergent region: {0}")]
    UncoveredRegion(String),

    #[error("Hasse bound violated at p = {p}: N = {order}")]
    Hasse { p: u64, order: u64 },

    #[error("inconsistent point order input: {0}")]
    InconsistentOrder(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
