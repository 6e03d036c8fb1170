//! Recognition model for zero-shot inference of Markov jump processes
//! from sets of noisy, discretely observed series: a bidirectional
//! recurrent series encoder, learnable-query attention pooling over
//! paths, exponential rate/variance heads with a softmax initial
//! distribution, the Gaussian/cross-entropy objective with missing-link
//! regularization, and the exact time-rescaling wrapper.

pub mod adamw;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod loss;
pub mod net;
pub mod predict;
pub mod series;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
pub use config::{ModelConfig, TrainConfig};
pub use error::{InferError, Result};
pub use loss::{loss_and_head_grads, LossGrads};
pub use net::{
    assemble_batch, attend_paths, backward, encode_series, forward, off_diagonal_index, NetParams,
    RecordEntry, RecordTruth,
};
pub use predict::{
    heads_to_prediction, predict, predict_batch, restrict_to_c, PredictionResult,
    PredictionSummary,
};
pub use series::{featurize_series, normalize_inputs};
pub use train::{evaluate_loss, train, EpochLog, TrainLog, TrainOutcome};
