//! Domain types and deterministic observable calculators for homogeneous
//! Markov jump processes on small state spaces.
//!
//! Everything here is a pure function of its inputs; there is no shared
//! mutable state and all operations may be called concurrently.

pub mod dfr;
pub mod error;
pub mod expm;
pub mod hellinger;
pub mod observables;
pub mod types;

pub use dfr::dfr_rate_matrix;
pub use error::{CoreError, Result};
pub use hellinger::{empirical_histogram, hellinger, time_averaged_hellinger};
pub use observables::{
    entropy_production_rate, master_solution, mean_first_passage_times, observable_report,
    relaxation_timescales, stationary_distribution, stationarity_residual,
    total_entropy_production,
};
pub use types::{
    AdjacencyMatrix, JumpPath, ObservableReport, ObservedSeries, ProbabilityVector, RateMatrix,
    MAX_STATES,
};
