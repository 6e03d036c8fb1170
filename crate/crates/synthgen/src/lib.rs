//! Synthetic training distributions for discretely observed Markov jump
//! processes: priors over adjacency, rates, initial conditions,
//! observation grids and label noise; bulk generation; a reproducible
//! binary container format; and the per-epoch batch schedule.

pub mod config;
pub mod dataset;
pub mod error;
pub mod sample;
pub mod schedule;

pub use config::{GeneratorConfig, StateQuota};
pub use dataset::{
    file_sha256, generate_dataset, manifest_path, read_dataset, verify_dataset, write_dataset,
    DatasetManifest,
};
pub use error::{GenError, Result};
pub use sample::{
    base_grid, generate_record, sample_adjacency, sample_grid, sample_initial_distribution,
    sample_rate_matrix, DatasetRecord, Pi0Kind,
};
pub use schedule::{batch_schedule, path_count_progression, ScheduledBatch};
