//! Input preparation: time normalization to the unit interval and token
//! featurization (one-hot state, observation time, inter-event time).

use mjp_core::ObservedSeries;
use ndarray::Array2;

use crate::error::{InferError, Result};

/// Divide all observation times by the maximum time over the set and
/// return the normalized series together with that scale. Predictions in
/// normalized units are mapped back by dividing by the same scale.
pub fn normalize_inputs(series: &[ObservedSeries]) -> Result<(Vec<ObservedSeries>, f64)> {
    if series.is_empty() {
        return Err(InferError::Empty("series set"));
    }
    let mut tau_max = 0.0f64;
    for s in series {
        for &t in s.times() {
            if t < 0.0 {
                return Err(InferError::NegativeTime(t));
            }
            tau_max = tau_max.max(t);
        }
    }
    if tau_max == 0.0 {
        return Err(InferError::ZeroTimeScale);
    }
    let normalized = series
        .iter()
        .map(|s| {
            ObservedSeries::new(
                s.times().iter().map(|&t| t / tau_max).collect(),
                s.labels().to_vec(),
            )
            .map_err(InferError::from)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((normalized, tau_max))
}

/// Write the token rows of one normalized series into `out` starting at
/// row 0: token i = [one-hot(x_i) | tau_i | delta_tau_i], with
/// `delta_tau_1 = tau_1 - 0`.
pub(crate) fn write_tokens(series: &ObservedSeries, c_max: usize, out: &mut ndarray::ArrayViewMut2<f64>) -> Result<()> {
    let width = c_max + 2;
    debug_assert!(out.ncols() == width && out.nrows() >= series.len());
    let mut prev_t = 0.0;
    for (row, (&t, &label)) in series.times().iter().zip(series.labels()).enumerate() {
        if label >= c_max {
            return Err(InferError::StateIndexTooLarge { state: label, c_max });
        }
        out[[row, label]] = 1.0;
        out[[row, c_max]] = t;
        out[[row, c_max + 1]] = t - prev_t;
        prev_t = t;
    }
    Ok(())
}

/// Featurize one normalized series into a fixed-shape token block padded
/// to `l_max`, with a validity mask (1.0 for real tokens).
pub fn featurize_series(
    series: &ObservedSeries,
    c_max: usize,
    l_max: usize,
) -> Result<(Array2<f64>, Vec<f64>)> {
    if series.len() > l_max {
        return Err(InferError::SeriesTooLong {
            len: series.len(),
            l_max,
        });
    }
    let mut tokens = Array2::zeros((l_max, c_max + 2));
    write_tokens(series, c_max, &mut tokens.view_mut())?;
    let mut mask = vec![0.0; l_max];
    mask[..series.len()].fill(1.0);
    Ok((tokens, mask))
}
