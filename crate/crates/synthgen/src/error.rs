use thiserror::Error;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generator config: {0}")]
    BadConfig(String),

    #[error("adjacency rejection sampling exceeded {0} retries")]
    AdjacencyRetries(usize),

    #[error("dataset file corrupt: {0}")]
    Corrupt(String),

    #[error("dataset checksum mismatch: manifest {expected}, file {got}")]
    ChecksumMismatch { expected: String, got: String },

    #[error(transparent)]
    Core(#[from] mjp_core::CoreError),

    #[error(transparent)]
    Sim(#[from] mjp_gillespie::SimError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("manifest parse error: {0}")]
    Manifest(String),
}

pub type Result<T> = std::result::Result<T, GenError>;
