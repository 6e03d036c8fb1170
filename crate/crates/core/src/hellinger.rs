//! Hellinger distance between discrete distributions, and the
//! time-averaged comparison of two observed ensembles.

use crate::error::{CoreError, Result};
use crate::types::ObservedSeries;

/// Hellinger distance `H(P, Q) = (1/sqrt(2)) * ||sqrt(P) - sqrt(Q)||_2`
/// between two normalized histograms. Bounded in `[0, 1]`; 0 iff equal,
/// 1 iff the supports are disjoint.
pub fn hellinger(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(CoreError::DimMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    let sq_sum: f64 = p
        .iter()
        .zip(q)
        .map(|(&a, &b)| {
            let d = a.max(0.0).sqrt() - b.max(0.0).sqrt();
            d * d
        })
        .sum();
    Ok((sq_sum / 2.0).sqrt().clamp(0.0, 1.0))
}

/// Normalized state histogram of a label collection.
pub fn empirical_histogram<I>(labels: I, state_count: usize) -> Vec<f64>
where
    I: IntoIterator<Item = usize>,
{
    let mut counts = vec![0.0f64; state_count];
    let mut total = 0.0;
    for s in labels {
        counts[s] += 1.0;
        total += 1.0;
    }
    if total > 0.0 {
        counts.iter_mut().for_each(|c| *c /= total);
    }
    counts
}

/// Time-averaged squared Hellinger distance between two ensembles of
/// series observed on a shared grid.
///
/// At every grid time, the per-time empirical state histograms of the
/// two sets are compared and the squared Hellinger distance recorded;
/// the result is the mean over grid times. Grid times at which either
/// set contributes no observation (a time past a series' last point)
/// are excluded from the average. Series times must match grid times
/// exactly.
pub fn time_averaged_hellinger(
    series_a: &[ObservedSeries],
    series_b: &[ObservedSeries],
    grid: &[f64],
) -> Result<f64> {
    if series_a.is_empty() || series_b.is_empty() {
        return Err(CoreError::Empty("series set"));
    }
    if grid.is_empty() {
        return Err(CoreError::Empty("grid"));
    }
    let state_count = series_a
        .iter()
        .chain(series_b)
        .map(|s| s.max_state_plus_one())
        .max()
        .unwrap_or(0);
    if state_count == 0 {
        return Err(CoreError::Empty("state labels"));
    }

    let counts_a = per_time_counts(series_a, grid, state_count)?;
    let counts_b = per_time_counts(series_b, grid, state_count)?;

    let mut total = 0.0;
    let mut used = 0usize;
    for g in 0..grid.len() {
        let na: f64 = counts_a[g].iter().sum();
        let nb: f64 = counts_b[g].iter().sum();
        if na == 0.0 || nb == 0.0 {
            continue;
        }
        let ha: Vec<f64> = counts_a[g].iter().map(|c| c / na).collect();
        let hb: Vec<f64> = counts_b[g].iter().map(|c| c / nb).collect();
        let h = hellinger(&ha, &hb)?;
        total += h * h;
        used += 1;
    }
    if used == 0 {
        return Err(CoreError::Empty("overlapping grid points"));
    }
    Ok(total / used as f64)
}

fn per_time_counts(
    series: &[ObservedSeries],
    grid: &[f64],
    state_count: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut counts = vec![vec![0.0f64; state_count]; grid.len()];
    for s in series {
        let mut g = 0usize;
        for (&t, &label) in s.times().iter().zip(s.labels()) {
            while g < grid.len() && grid[g] < t {
                g += 1;
            }
            if g >= grid.len() || grid[g] != t {
                return Err(CoreError::GridMismatch { time: t });
            }
            counts[g][label] += 1.0;
        }
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hellinger_zero_on_equal() {
        let p = [0.2, 0.3, 0.5];
        assert_eq!(hellinger(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn hellinger_one_on_disjoint_support() {
        assert!((hellinger(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hellinger_direct_formula_value() {
        // H((0.5, 0.5), (1, 0)) = (1/sqrt(2)) sqrt((sqrt(0.5) - 1)^2 + 0.5)
        let h = hellinger(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        let expect = ((2.0 - 2.0f64.sqrt()) / 2.0).sqrt();
        assert!((h - expect).abs() < 1e-14);
        assert!((h - 0.5411961001461969).abs() < 1e-12);
    }

    #[test]
    fn hellinger_symmetric_and_dim_checked() {
        let p = [0.1, 0.9];
        let q = [0.6, 0.4];
        assert_eq!(hellinger(&p, &q).unwrap(), hellinger(&q, &p).unwrap());
        assert!(hellinger(&p, &[0.5, 0.25, 0.25]).is_err());
    }

    fn series(times: &[f64], labels: &[usize]) -> ObservedSeries {
        ObservedSeries::new(times.to_vec(), labels.to_vec()).unwrap()
    }

    #[test]
    fn time_averaged_zero_on_identical_sets() {
        let grid = [0.0, 1.0, 2.0];
        let set = vec![series(&grid, &[0, 1, 0]), series(&grid, &[1, 1, 0])];
        let d = time_averaged_hellinger(&set, &set, &grid).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn time_averaged_one_on_disjoint_constant_ensembles() {
        let grid = [0.0, 1.0];
        let a = vec![series(&grid, &[0, 0]); 3];
        let b = vec![series(&grid, &[1, 1]); 3];
        let d = time_averaged_hellinger(&a, &b, &grid).unwrap();
        assert!((d - 1.0).abs() < 1e-15);
    }

    #[test]
    fn time_averaged_excludes_degenerate_points() {
        let grid = [0.0, 1.0, 2.0];
        // Second set never reaches t = 2: that point is excluded.
        let a = vec![series(&grid, &[0, 0, 1])];
        let b = vec![series(&[0.0, 1.0], &[0, 1])];
        let d = time_averaged_hellinger(&a, &b, &grid).unwrap();
        assert!((d - 0.5).abs() < 1e-15); // H^2 = 0 at t=0, 1 at t=1
    }

    #[test]
    fn time_averaged_rejects_off_grid_times() {
        let grid = [0.0, 1.0];
        let a = vec![series(&grid, &[0, 0])];
        let b = vec![series(&[0.0, 1.5], &[0, 0])];
        match time_averaged_hellinger(&a, &b, &grid) {
            Err(CoreError::GridMismatch { .. }) => {}
            other => panic!("expected GridMismatch, got {other:?}"),
        }
    }

    #[test]
    fn time_averaged_rejects_empty_sets() {
        let grid = [0.0];
        let a = vec![series(&grid, &[0])];
        assert!(time_averaged_hellinger(&a, &[], &grid).is_err());
    }
}
