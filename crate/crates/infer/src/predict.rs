//! From head outputs to rate-matrix estimates: exponential heads with
//! the time-rescaling wrapper, restriction to the known state count, and
//! batched prediction with across-batch averaging.

use mjp_core::{ObservedSeries, ProbabilityVector, RateMatrix};
use ndarray::ArrayView1;

use crate::config::ModelConfig;
use crate::error::{InferError, Result};
use crate::net::{assemble_batch, forward, off_diagonal_index, NetParams, RecordEntry};

/// Model output mapped back to the input time scale.
#[derive(Debug, Clone)]
pub struct PredictionResult {
    /// Estimated rate matrix, diagonal normalized.
    pub f_hat: RateMatrix,
    /// Per-entry variance of the rate estimates (off-diagonal
    /// meaningful, zero diagonal), row-major.
    pub var_hat: Vec<f64>,
    /// Estimated initial distribution.
    pub pi0_hat: ProbabilityVector,
    /// Normalization scale used for this prediction.
    pub tau_max: f64,
}

/// Batched prediction: the entry-wise mean across batches plus per-entry
/// dispersion.
#[derive(Debug, Clone)]
pub struct PredictionSummary {
    pub mean: PredictionResult,
    /// Std of the off-diagonal rate estimates across batches, row-major.
    pub std_f: Vec<f64>,
    /// Std of the initial-distribution estimates across batches.
    pub std_pi0: Vec<f64>,
    pub batch_count: usize,
    pub per_batch: Vec<PredictionResult>,
}

/// Map raw head outputs (normalized units) to a prediction on the
/// caller's time scale: off-diagonal rates `exp(phi_rate) / tau_max`,
/// variances `exp(phi_var) / tau_max`, initial distribution
/// `softmax(phi_init)`; the diagonal is the negative row sum.
pub fn heads_to_prediction(
    phi_rate: ArrayView1<f64>,
    phi_var: ArrayView1<f64>,
    phi_init: ArrayView1<f64>,
    c_max: usize,
    tau_max: f64,
) -> Result<PredictionResult> {
    if !(tau_max > 0.0) || !tau_max.is_finite() {
        return Err(InferError::ZeroTimeScale);
    }
    let mut off = vec![0.0; c_max * c_max];
    let mut var = vec![0.0; c_max * c_max];
    for i in 0..c_max {
        for j in 0..c_max {
            if i == j {
                continue;
            }
            let m = off_diagonal_index(i, j, c_max);
            off[i * c_max + j] = phi_rate[m].exp() / tau_max;
            var[i * c_max + j] = phi_var[m].exp() / tau_max;
        }
    }
    let f_hat = RateMatrix::from_off_diagonal(c_max, |i, j| off[i * c_max + j])?;

    let max = phi_init.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = phi_init.iter().map(|&x| (x - max).exp()).collect();
    let pi0_hat = ProbabilityVector::from_unnormalized(weights)?;

    Ok(PredictionResult {
        f_hat,
        var_hat: var,
        pi0_hat,
        tau_max,
    })
}

/// Zero all entries outside the top-left `c`-by-`c` block, recompute the
/// diagonal, and truncate the variance matrix and initial distribution
/// (renormalized) to `c` states.
pub fn restrict_to_c(pred: &PredictionResult, c: usize) -> Result<PredictionResult> {
    let c_full = pred.f_hat.dim();
    if c < 2 || c > c_full {
        return Err(InferError::BadConfig(format!(
            "restriction target {c} outside 2..={c_full}"
        )));
    }
    let f_hat = RateMatrix::from_off_diagonal(c, |i, j| pred.f_hat.get(i, j))?;
    let mut var = vec![0.0; c * c];
    for i in 0..c {
        for j in 0..c {
            if i != j {
                var[i * c + j] = pred.var_hat[i * c_full + j];
            }
        }
    }
    let pi0_hat =
        ProbabilityVector::from_unnormalized(pred.pi0_hat.weights()[..c].to_vec())?;
    Ok(PredictionResult {
        f_hat,
        var_hat: var,
        pi0_hat,
        tau_max: pred.tau_max,
    })
}

/// Run the full pipeline on one batch of series treated as a single
/// process: normalize, featurize, encode, attend, heads, restrict.
pub fn predict_batch(
    params: &NetParams,
    config: &ModelConfig,
    series: &[&ObservedSeries],
    c: usize,
) -> Result<PredictionResult> {
    let batch = assemble_batch(
        &[RecordEntry {
            series: series.to_vec(),
            truth: None,
        }],
        config,
    )?;
    let fx = forward(params, config, &batch)?;
    let pred = heads_to_prediction(
        fx.phi_rate.row(0),
        fx.phi_var.row(0),
        fx.phi_init.row(0),
        config.c_max,
        batch.tau_max[0],
    )?;
    restrict_to_c(&pred, c)
}

/// Predict from an arbitrary number of series: the set is split into
/// non-overlapping batches of at most `max_paths` (the training maximum
/// by default), each batch is predicted independently, and the entry-wise
/// mean and std across batches are reported.
pub fn predict(
    params: &NetParams,
    config: &ModelConfig,
    series: &[ObservedSeries],
    c: usize,
    max_paths: Option<usize>,
) -> Result<PredictionSummary> {
    if series.is_empty() {
        return Err(InferError::Empty("series set"));
    }
    let cap = max_paths.unwrap_or(config.k_max).max(1);
    let refs: Vec<&ObservedSeries> = series.iter().collect();
    let per_batch: Vec<PredictionResult> = refs
        .chunks(cap)
        .map(|chunk| predict_batch(params, config, chunk, c))
        .collect::<Result<Vec<_>>>()?;

    let n = per_batch.len();
    let nf = n as f64;
    let mut mean_off = vec![0.0; c * c];
    let mut mean_var = vec![0.0; c * c];
    let mut mean_pi = vec![0.0; c];
    let mut mean_tau = 0.0;
    for p in &per_batch {
        for i in 0..c {
            for j in 0..c {
                if i != j {
                    mean_off[i * c + j] += p.f_hat.get(i, j) / nf;
                    mean_var[i * c + j] += p.var_hat[i * c + j] / nf;
                }
            }
            mean_pi[i] += p.pi0_hat.get(i) / nf;
        }
        mean_tau += p.tau_max / nf;
    }
    let mut std_f = vec![0.0; c * c];
    let mut std_pi = vec![0.0; c];
    if n > 1 {
        for p in &per_batch {
            for i in 0..c {
                for j in 0..c {
                    if i != j {
                        let d = p.f_hat.get(i, j) - mean_off[i * c + j];
                        std_f[i * c + j] += d * d / (nf - 1.0);
                    }
                }
                let d = p.pi0_hat.get(i) - mean_pi[i];
                std_pi[i] += d * d / (nf - 1.0);
            }
        }
        std_f.iter_mut().for_each(|x| *x = x.sqrt());
        std_pi.iter_mut().for_each(|x| *x = x.sqrt());
    }

    let mean = PredictionResult {
        f_hat: RateMatrix::from_off_diagonal(c, |i, j| mean_off[i * c + j])?,
        var_hat: mean_var,
        pi0_hat: ProbabilityVector::from_unnormalized(mean_pi)?,
        tau_max: mean_tau,
    };
    Ok(PredictionSummary {
        mean,
        std_f,
        std_pi0: std_pi,
        batch_count: n,
        per_batch,
    })
}
