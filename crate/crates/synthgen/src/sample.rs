//! Prior sampling: adjacency, rates, initial conditions, observation
//! grids, and the per-record composition of all of them.

use mjp_core::{AdjacencyMatrix, CoreError, ObservedSeries, ProbabilityVector, RateMatrix};
use mjp_gillespie::{apply_label_noise, observe_path, sample_path, RandomSource};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::config::GeneratorConfig;
use crate::error::{GenError, Result};

const MAX_ADJACENCY_RETRIES: usize = 10_000;

/// Stream roles under one record id.
pub(crate) mod role {
    pub const ADJACENCY: u8 = 0;
    pub const HYPER: u8 = 1;
    pub const RATES: u8 = 2;
    pub const INIT: u8 = 3;
    pub const PATH: u8 = 4;
    pub const GRID: u8 = 5;
    pub const NOISE: u8 = 6;
}

/// Which branch of the initial-condition mixture a record drew.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pi0Kind {
    Stationary,
    Dirichlet,
}

/// With probability 1/2 the fully connected graph, otherwise an
/// Erdos-Renyi draw with link probability 1/2, rejection-resampled until
/// the undirected support is connected.
pub fn sample_adjacency(c: usize, rng: &mut ChaCha8Rng) -> Result<AdjacencyMatrix> {
    if rng.random_range(0.0..1.0) < 0.5 {
        return Ok(AdjacencyMatrix::fully_connected(c));
    }
    for _ in 0..MAX_ADJACENCY_RETRIES {
        let mut entries = vec![false; c * c];
        for i in 0..c {
            for j in 0..c {
                if i != j {
                    entries[i * c + j] = rng.random_range(0.0..1.0) < 0.5;
                }
            }
        }
        if mjp_core::types::undirected_connected(c, |i, j| entries[i * c + j]) {
            return Ok(AdjacencyMatrix::new(c, entries)?);
        }
    }
    Err(GenError::AdjacencyRetries(MAX_ADJACENCY_RETRIES))
}

/// Rates `F_ij = a_ij * f_ij` with `f_ij ~ Beta(alpha, beta)` i.i.d.;
/// draws outside the open interval (0, 1) are redrawn. The diagonal is
/// the negative row sum.
pub fn sample_rate_matrix(
    a: &AdjacencyMatrix,
    alpha: f64,
    beta: f64,
    rng: &mut ChaCha8Rng,
) -> Result<RateMatrix> {
    let c = a.dim();
    let dist = Beta::new(alpha, beta)
        .map_err(|e| GenError::BadConfig(format!("Beta({alpha}, {beta}): {e}")))?;
    let mut rates = vec![0.0; c * c];
    for i in 0..c {
        for j in 0..c {
            if i == j {
                continue;
            }
            let mut f = dist.sample(rng);
            while !(f > 0.0 && f < 1.0) {
                f = dist.sample(rng);
            }
            if a.get(i, j) {
                rates[i * c + j] = f;
            }
        }
    }
    Ok(RateMatrix::from_off_diagonal(c, |i, j| rates[i * c + j])?)
}

/// Initial-condition mixture: with probability 1/2 the stationary
/// distribution of `f`, otherwise a symmetric Dirichlet draw.
/// Stationary-distribution failures (reducible `f`) propagate.
pub fn sample_initial_distribution(
    f: &RateMatrix,
    concentration: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(ProbabilityVector, Pi0Kind)> {
    if rng.random_range(0.0..1.0) < 0.5 {
        let p = mjp_core::stationary_distribution(f)?;
        Ok((p, Pi0Kind::Stationary))
    } else {
        Ok((sample_dirichlet(f.dim(), concentration, rng)?, Pi0Kind::Dirichlet))
    }
}

/// Symmetric Dirichlet draw via normalized Gamma(concentration, 1)
/// variates.
fn sample_dirichlet(c: usize, concentration: f64, rng: &mut ChaCha8Rng) -> Result<ProbabilityVector> {
    let dist = Gamma::new(concentration, 1.0)
        .map_err(|e| GenError::BadConfig(format!("Gamma({concentration}, 1): {e}")))?;
    let w: Vec<f64> = (0..c).map(|_| dist.sample(rng)).collect();
    Ok(ProbabilityVector::from_unnormalized(w)?)
}

/// The regular base grid: `l` uniform points on `[0, t_end]`.
pub fn base_grid(l: usize, t_end: f64) -> Vec<f64> {
    let step = t_end / (l - 1) as f64;
    (0..l).map(|i| i as f64 * step).collect()
}

/// Subsampled observation grid. With probability 1/2 a regular stride
/// (drawn from `stride_set`) of the base grid; otherwise a Bernoulli
/// mask with survival probability drawn from `survival_set`. The first
/// base point always survives and a mask leaving fewer than two points
/// is redrawn.
pub fn sample_grid(
    l: usize,
    t_end: f64,
    stride_set: &[usize],
    survival_set: &[f64],
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let base = base_grid(l, t_end);
    if rng.random_range(0.0..1.0) < 0.5 {
        let stride = stride_set[rng.random_range(0..stride_set.len())];
        base.iter().copied().step_by(stride).collect()
    } else {
        let survival = survival_set[rng.random_range(0..survival_set.len())];
        loop {
            let mut grid: Vec<f64> = vec![base[0]];
            for &t in &base[1..] {
                if rng.random_range(0.0..1.0) < survival {
                    grid.push(t);
                }
            }
            if grid.len() >= 2 {
                return grid;
            }
        }
    }
}

/// One synthetic process: ground truth plus its observed series.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub process_id: u64,
    pub rate_matrix: RateMatrix,
    pub adjacency: AdjacencyMatrix,
    pub pi0: ProbabilityVector,
    pub pi0_kind: Pi0Kind,
    pub alpha: f64,
    pub beta: f64,
    pub series: Vec<ObservedSeries>,
    /// Noiseless labels per series, kept only when configured.
    pub clean_series: Option<Vec<Vec<usize>>>,
}

impl DatasetRecord {
    pub fn state_count(&self) -> usize {
        self.rate_matrix.dim()
    }
}

/// Generate one record: adjacency -> rates -> initial condition -> K
/// independent (path, grid, observation, noise) draws on `[0, horizon]`.
///
/// Every stage runs on its own stream derived from
/// `(master_seed, record_id)`, so records are reproducible in isolation
/// and can be generated in parallel.
///
/// When the stationary branch of the initial-condition mixture fails on
/// a reducible rate matrix, the record falls back to the Dirichlet
/// branch instead of aborting the dataset.
pub fn generate_record(c: usize, config: &GeneratorConfig, record_id: u64) -> Result<DatasetRecord> {
    if c < 2 || c > config.c_max {
        return Err(GenError::BadConfig(format!(
            "state count {c} outside 2..={}",
            config.c_max
        )));
    }
    let seed = config.master_seed;

    let mut adj_rng = RandomSource::derived(seed, record_id, role::ADJACENCY, 0).rng();
    let adjacency = sample_adjacency(c, &mut adj_rng)?;

    let mut hyper_rng = RandomSource::derived(seed, record_id, role::HYPER, 0).rng();
    let alpha = config.alpha_set[hyper_rng.random_range(0..config.alpha_set.len())];
    let beta = config.beta_set[hyper_rng.random_range(0..config.beta_set.len())];

    let mut rate_rng = RandomSource::derived(seed, record_id, role::RATES, 0).rng();
    let rate_matrix = sample_rate_matrix(&adjacency, alpha, beta, &mut rate_rng)?;

    let mut init_rng = RandomSource::derived(seed, record_id, role::INIT, 0).rng();
    let (pi0, pi0_kind) =
        match sample_initial_distribution(&rate_matrix, config.dirichlet_concentration, &mut init_rng) {
            Ok(v) => v,
            Err(GenError::Core(CoreError::Reducible)) => (
                sample_dirichlet(c, config.dirichlet_concentration, &mut init_rng)?,
                Pi0Kind::Dirichlet,
            ),
            Err(e) => return Err(e),
        };

    let k = config.paths_per_process;
    let mut series = Vec::with_capacity(k);
    let mut clean = config.store_clean.then(|| Vec::with_capacity(k));
    for path_idx in 0..k {
        let item = path_idx as u16;
        let path_src = RandomSource::derived(seed, record_id, role::PATH, item);
        let path = sample_path(&rate_matrix, &pi0, 0.0, config.horizon, &path_src)?;

        let mut grid_rng = RandomSource::derived(seed, record_id, role::GRID, item).rng();
        let grid = sample_grid(
            config.base_grid_len,
            config.horizon,
            &config.stride_set,
            &config.survival_set,
            &mut grid_rng,
        );

        let labels = observe_path(&path, &grid)?;
        let noise_src = RandomSource::derived(seed, record_id, role::NOISE, item);
        let noisy = apply_label_noise(&labels, c, config.label_noise, &noise_src)?;

        if let Some(clean) = clean.as_mut() {
            clean.push(labels);
        }
        series.push(ObservedSeries::new(grid, noisy)?);
    }

    Ok(DatasetRecord {
        process_id: record_id,
        rate_matrix,
        adjacency,
        pi0,
        pi0_kind,
        alpha,
        beta,
        series,
        clean_series: clean,
    })
}
