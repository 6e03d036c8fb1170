use thiserror::Error;

/// Errors produced by the core domain types and observable calculators.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: &'static str },

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("rate matrix is reducible (stationary distribution is not unique)")]
    Reducible,

    #[error("irreversible transition pair ({from} -> {to}): forward rate positive, reverse rate zero")]
    Irreversible { from: usize, to: usize },

    #[error("singular linear system while solving {context}")]
    Singular { context: &'static str },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("series time {time} not found on the shared grid")]
    GridMismatch { time: f64 },
}

pub type Result<T> = std::result::Result<T, CoreError>;
