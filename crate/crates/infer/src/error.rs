use thiserror::Error;

#[derive(Debug, Error)]
pub enum InferError {
    #[error("invalid model config: {0}")]
    BadConfig(String),

    #[error("state index {state} outside model range 0..{c_max}")]
    StateIndexTooLarge { state: usize, c_max: usize },

    #[error("series length {len} exceeds the model grid cap {l_max}")]
    SeriesTooLong { len: usize, l_max: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("maximum observation time is zero; cannot normalize")]
    ZeroTimeScale,

    #[error("negative observation time {0}")]
    NegativeTime(f64),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("checkpoint corrupt: {0}")]
    Corrupt(String),

    #[error(transparent)]
    Core(#[from] mjp_core::CoreError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, InferError>;
