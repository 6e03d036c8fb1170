//! Deterministic observable calculators: master-equation solution,
//! stationary distribution, relaxation spectrum, mean first-passage
//! times and entropy production.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{CoreError, Result};
use crate::expm::expm;
use crate::types::{ObservableReport, ProbabilityVector, RateMatrix};

/// Relative threshold for classifying eigenvalues as the conserved zero
/// mode; scaled by `max |F_ij| * dim`.
pub const EPS_ZERO: f64 = 1e-10;

fn to_dmatrix(f: &RateMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(f.dim(), f.dim(), f.entries())
}

/// Solve the master equation at time `t`: returns `p0 * exp(F t)`.
pub fn master_solution(f: &RateMatrix, p0: &ProbabilityVector, t: f64) -> Result<ProbabilityVector> {
    if p0.dim() != f.dim() {
        return Err(CoreError::DimMismatch {
            expected: f.dim(),
            got: p0.dim(),
        });
    }
    if !t.is_finite() || t < 0.0 {
        return Err(CoreError::Invalid {
            what: "time",
            reason: format!("t = {t} must be finite and >= 0"),
        });
    }
    let e = expm(&(to_dmatrix(f) * t));
    let p = RowDVector::from_row_slice(p0.weights()) * e;
    clamp_to_probability(p.as_slice())
}

/// Propagator `exp(F * dt)` as a plain row-major buffer; used to step a
/// distribution along a uniform time grid without repeated exponentials.
pub(crate) fn propagator(f: &RateMatrix, dt: f64) -> Vec<f64> {
    let e = expm(&(to_dmatrix(f) * dt));
    let dim = f.dim();
    let mut out = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..dim {
            out[i * dim + j] = e[(i, j)];
        }
    }
    out
}

fn clamp_to_probability(weights: &[f64]) -> Result<ProbabilityVector> {
    let mut w = weights.to_vec();
    for x in &mut w {
        if !x.is_finite() {
            return Err(CoreError::NonFinite {
                context: "master equation solution",
            });
        }
        if *x < 0.0 {
            if *x < -1e-9 {
                return Err(CoreError::Invalid {
                    what: "master equation solution",
                    reason: format!("substantially negative probability {x}"),
                });
            }
            *x = 0.0;
        }
    }
    ProbabilityVector::from_unnormalized(w)
}

/// The stationary distribution `p*` with `p* F = 0`, computed from the
/// null space of `F^T`. Errors with `Reducible` when that null space has
/// dimension greater than one.
pub fn stationary_distribution(f: &RateMatrix) -> Result<ProbabilityVector> {
    let dim = f.dim();
    let ft = to_dmatrix(f).transpose();
    let svd = ft.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("svd requested v_t");
    let scale = f.max_abs().max(f64::MIN_POSITIVE);
    let tol = EPS_ZERO * scale * dim as f64;

    let mut null_idx = None;
    let mut null_count = 0;
    let mut smallest = f64::INFINITY;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s < tol {
            null_count += 1;
        }
        if s < smallest {
            smallest = s;
            null_idx = Some(k);
        }
    }
    if null_count > 1 {
        return Err(CoreError::Reducible);
    }
    let k = null_idx.ok_or(CoreError::Empty("singular values"))?;
    if smallest >= tol {
        // No numerically zero singular value at all: not a generator.
        return Err(CoreError::Invalid {
            what: "rate matrix",
            reason: format!("no zero eigenvalue found (smallest singular value {smallest})"),
        });
    }

    let mut v: Vec<f64> = v_t.row(k).iter().copied().collect();
    let sum: f64 = v.iter().sum();
    if sum < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    for x in &mut v {
        if *x < 0.0 {
            if *x < -1e-9 {
                return Err(CoreError::Reducible);
            }
            *x = 0.0;
        }
    }
    let p = ProbabilityVector::from_unnormalized(v)?;

    // Contract: residual below 1e-10 in the infinity norm.
    let res = stationarity_residual(f, &p);
    if res >= 1e-10 * scale.max(1.0) {
        return Err(CoreError::Invalid {
            what: "stationary distribution",
            reason: format!("residual {res} above tolerance"),
        });
    }
    Ok(p)
}

/// Infinity norm of `p * F`.
pub fn stationarity_residual(f: &RateMatrix, p: &ProbabilityVector) -> f64 {
    let dim = f.dim();
    (0..dim)
        .map(|j| {
            (0..dim)
                .map(|i| p.get(i) * f.get(i, j))
                .sum::<f64>()
                .abs()
        })
        .fold(0.0, f64::max)
}

/// Decay timescales `1/|Re(lambda)|` of the non-zero eigenvalues, sorted
/// descending, plus whether the slowest mode oscillates (non-zero
/// imaginary part).
pub fn relaxation_timescales(f: &RateMatrix) -> (Vec<f64>, bool) {
    let eigs = to_dmatrix(f).complex_eigenvalues();
    let eps = EPS_ZERO * f.max_abs().max(f64::MIN_POSITIVE) * f.dim() as f64;

    let mut modes: Vec<(f64, f64)> = eigs
        .iter()
        .filter(|l| l.re < -eps)
        .map(|l| (1.0 / l.re.abs(), l.im.abs()))
        .collect();
    modes.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());

    let oscillatory = modes.first().map_or(false, |&(_, im)| im > eps);
    (modes.into_iter().map(|(ts, _)| ts).collect(), oscillatory)
}

/// Mean first-passage times `tau[i][j]` (row-major), solving, for each
/// target j, the linear system `1 + sum_k F_ik tau_kj = 0` over i != j
/// with `tau_jj = 0`.
pub fn mean_first_passage_times(f: &RateMatrix) -> Result<Vec<f64>> {
    let dim = f.dim();
    let mut tau = vec![0.0; dim * dim];
    for target in 0..dim {
        let others: Vec<usize> = (0..dim).filter(|&i| i != target).collect();
        let n = others.len();
        let mut m = DMatrix::<f64>::zeros(n, n);
        for (r, &i) in others.iter().enumerate() {
            for (c, &k) in others.iter().enumerate() {
                m[(r, c)] = f.get(i, k);
            }
        }
        let rhs = DVector::from_element(n, -1.0);
        let sol = m.lu().solve(&rhs).ok_or(CoreError::Singular {
            context: "mean first-passage times",
        })?;
        for (r, &i) in others.iter().enumerate() {
            let v = sol[r];
            if !v.is_finite() || v < -1e-9 {
                return Err(CoreError::Singular {
                    context: "mean first-passage times",
                });
            }
            tau[i * dim + target] = v.max(0.0);
        }
    }
    Ok(tau)
}

/// Total entropy production rate at distribution `p`:
/// `sigma = sum_{i != j, F_ij > 0} p_i F_ij ln(p_i F_ij / (p_j F_ji))`.
///
/// Requires a dynamically reversible graph: every positive rate must have
/// a positive reverse rate, otherwise the rate diverges.
pub fn entropy_production_rate(f: &RateMatrix, p: &ProbabilityVector) -> Result<f64> {
    let dim = f.dim();
    if p.dim() != dim {
        return Err(CoreError::DimMismatch {
            expected: dim,
            got: p.dim(),
        });
    }
    for i in 0..dim {
        for j in 0..dim {
            if i != j && f.get(i, j) > 0.0 && f.get(j, i) == 0.0 {
                return Err(CoreError::Irreversible { from: i, to: j });
            }
        }
    }
    let mut sigma = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            if i == j || f.get(i, j) == 0.0 {
                continue;
            }
            let fwd = p.get(i) * f.get(i, j);
            if fwd == 0.0 {
                continue;
            }
            let bwd = p.get(j) * f.get(j, i);
            sigma += fwd * (fwd / bwd).ln();
        }
    }
    Ok(sigma)
}

/// Total entropy production over `[0, T]`: trapezoidal quadrature of the
/// entropy production rate along the master-equation solution started at
/// `p0`, on `n_quad` uniform points.
pub fn total_entropy_production(
    f: &RateMatrix,
    p0: &ProbabilityVector,
    t_end: f64,
    n_quad: usize,
) -> Result<f64> {
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(CoreError::Invalid {
            what: "horizon",
            reason: format!("T = {t_end} must be finite and > 0"),
        });
    }
    if n_quad < 2 {
        return Err(CoreError::Invalid {
            what: "quadrature",
            reason: format!("n_quad = {n_quad} must be >= 2"),
        });
    }
    if p0.dim() != f.dim() {
        return Err(CoreError::DimMismatch {
            expected: f.dim(),
            got: p0.dim(),
        });
    }
    let dim = f.dim();
    let dt = t_end / (n_quad - 1) as f64;
    let step = propagator(f, dt);

    let mut p = p0.weights().to_vec();
    let mut total = 0.0;
    for k in 0..n_quad {
        let pk = clamp_to_probability(&p)?;
        let sigma = entropy_production_rate(f, &pk)?;
        let weight = if k == 0 || k == n_quad - 1 { 0.5 } else { 1.0 };
        total += weight * sigma;
        if k + 1 < n_quad {
            let mut next = vec![0.0; dim];
            for j in 0..dim {
                let mut acc = 0.0;
                for i in 0..dim {
                    acc += p[i] * step[i * dim + j];
                }
                next[j] = acc;
            }
            p = next;
        }
    }
    Ok(total * dt)
}

/// Bundle of the deterministic observables of a rate matrix.
pub fn observable_report(f: &RateMatrix) -> Result<ObservableReport> {
    let stationary = stationary_distribution(f)?;
    let (timescales, oscillatory) = relaxation_timescales(f);
    let mfpt = mean_first_passage_times(f)?;
    Ok(ObservableReport {
        stationary,
        timescales,
        oscillatory,
        mfpt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dfr::dfr_rate_matrix;

    fn two_state(a: f64, b: f64) -> RateMatrix {
        RateMatrix::from_off_diagonal(2, |i, _| if i == 0 { a } else { b }).unwrap()
    }

    #[test]
    fn master_solution_at_zero_is_identity() {
        let f = two_state(0.3, 0.7);
        let p0 = ProbabilityVector::new(vec![0.25, 0.75]).unwrap();
        let p = master_solution(&f, &p0, 0.0).unwrap();
        assert!((p.get(0) - 0.25).abs() < 1e-14);
        assert!((p.get(1) - 0.75).abs() < 1e-14);
    }

    #[test]
    fn master_solution_symmetric_two_state_closed_form() {
        // p(t) = (1/2 (1 + e^{-2at}), 1/2 (1 - e^{-2at})) from p0 = (1, 0).
        let a = 0.5;
        let t = 1.0;
        let f = two_state(a, a);
        let p0 = ProbabilityVector::delta(2, 0);
        let p = master_solution(&f, &p0, t).unwrap();
        let decay = (-2.0 * a * t).exp();
        assert!((p.get(0) - 0.5 * (1.0 + decay)).abs() < 1e-12);
        assert!((p.get(1) - 0.5 * (1.0 - decay)).abs() < 1e-12);
    }

    #[test]
    fn master_solution_matches_euler_integration_on_dfr() {
        // Fine-step explicit Euler integration of dp/dt = p F as an
        // independent oracle.
        let f = dfr_rate_matrix(1.0, 1.0, 1.0);
        let dim = f.dim();
        let p0 = ProbabilityVector::uniform(dim);
        let t_end = 2.5;
        let dt: f64 = 1e-5;
        let steps = (t_end / dt).round() as usize;
        let mut p = p0.weights().to_vec();
        for _ in 0..steps {
            let mut dp = vec![0.0; dim];
            for j in 0..dim {
                for i in 0..dim {
                    dp[j] += p[i] * f.get(i, j);
                }
            }
            for j in 0..dim {
                p[j] += dt * dp[j];
            }
        }
        let exact = master_solution(&f, &p0, t_end).unwrap();
        for j in 0..dim {
            assert!(
                (exact.get(j) - p[j]).abs() < 1e-6,
                "component {j}: expm {} vs euler {}",
                exact.get(j),
                p[j]
            );
        }
    }

    #[test]
    fn master_solution_dimension_mismatch() {
        let f = two_state(0.3, 0.7);
        let p0 = ProbabilityVector::uniform(3);
        assert!(master_solution(&f, &p0, 1.0).is_err());
        assert!(master_solution(&f, &ProbabilityVector::uniform(2), -1.0).is_err());
    }

    #[test]
    fn stationary_symmetric_two_state_is_uniform() {
        let f = two_state(0.4, 0.4);
        let p = stationary_distribution(&f).unwrap();
        assert!((p.get(0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn stationary_two_state_closed_form() {
        // p* = (b/(a+b), a/(a+b)) at (a, b) = (0.2, 0.8).
        let f = two_state(0.2, 0.8);
        let p = stationary_distribution(&f).unwrap();
        assert!((p.get(0) - 0.8).abs() < 1e-12);
        assert!((p.get(1) - 0.2).abs() < 1e-12);
        assert!(stationarity_residual(&f, &p) < 1e-10);
    }

    #[test]
    fn stationary_rejects_two_null_directions() {
        // Two disconnected 2-state blocks: null space of F^T has dim 2.
        // Bypasses the adjacency type on purpose; RateMatrix itself does
        // not require connectivity.
        let f = RateMatrix::new(
            4,
            vec![
                -0.5, 0.5, 0.0, 0.0, //
                0.5, -0.5, 0.0, 0.0, //
                0.0, 0.0, -0.3, 0.3, //
                0.0, 0.0, 0.3, -0.3,
            ],
        )
        .unwrap();
        match stationary_distribution(&f) {
            Err(CoreError::Reducible) => {}
            other => panic!("expected Reducible, got {other:?}"),
        }
    }

    #[test]
    fn stationary_absorbing_chain_is_point_mass() {
        // One absorbing state still has a unique null direction.
        let f = RateMatrix::new(2, vec![-0.7, 0.7, 0.0, 0.0]).unwrap();
        let p = stationary_distribution(&f).unwrap();
        assert!((p.get(1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn relaxation_two_state() {
        let (ts, osc) = relaxation_timescales(&two_state(0.2, 0.8));
        assert_eq!(ts.len(), 1);
        assert!((ts[0] - 1.0).abs() < 1e-12);
        assert!(!osc);
    }

    #[test]
    fn relaxation_directed_ring_is_oscillatory() {
        // Circulant eigenvalues -3/2 +- i sqrt(3)/2 and 0.
        let f = RateMatrix::from_off_diagonal(3, |i, j| if j == (i + 1) % 3 { 1.0 } else { 0.0 })
            .unwrap();
        let (ts, osc) = relaxation_timescales(&f);
        assert_eq!(ts.len(), 2);
        assert!((ts[0] - 1.0 / 1.5).abs() < 1e-12);
        assert!((ts[1] - 1.0 / 1.5).abs() < 1e-12);
        assert!(osc);
    }

    #[test]
    fn mfpt_two_state_closed_form() {
        // tau_01 = 1/a, tau_10 = 1/b at (0.2, 0.8).
        let f = two_state(0.2, 0.8);
        let tau = mean_first_passage_times(&f).unwrap();
        assert!((tau[1] - 5.0).abs() < 1e-12);
        assert!((tau[2] - 1.25).abs() < 1e-12);
        assert_eq!(tau[0], 0.0);
        assert_eq!(tau[3], 0.0);
    }

    #[test]
    fn entropy_rate_zero_for_two_state_at_stationarity() {
        let f = two_state(0.37, 1.21);
        let p = stationary_distribution(&f).unwrap();
        let sigma = entropy_production_rate(&f, &p).unwrap();
        assert!(sigma.abs() < 1e-10);
    }

    #[test]
    fn entropy_rate_zero_for_symmetric_dfr() {
        let f = dfr_rate_matrix(0.0, 1.0, 1.0);
        let p = stationary_distribution(&f).unwrap();
        let sigma = entropy_production_rate(&f, &p).unwrap();
        assert!(sigma.abs() < 1e-10, "sigma = {sigma}");
    }

    #[test]
    fn entropy_rate_positive_off_equilibrium() {
        let f = dfr_rate_matrix(1.0, 1.0, 1.0);
        let p = stationary_distribution(&f).unwrap();
        let sigma = entropy_production_rate(&f, &p).unwrap();
        assert!(sigma > 0.0);
    }

    #[test]
    fn entropy_rate_rejects_irreversible_graph() {
        let f = RateMatrix::from_off_diagonal(3, |i, j| if j == (i + 1) % 3 { 1.0 } else { 0.0 })
            .unwrap();
        let p = ProbabilityVector::uniform(3);
        match entropy_production_rate(&f, &p) {
            Err(CoreError::Irreversible { .. }) => {}
            other => panic!("expected Irreversible, got {other:?}"),
        }
    }

    #[test]
    fn total_entropy_stationary_start_is_linear_in_time() {
        let f = dfr_rate_matrix(1.0, 1.0, 1.0);
        let p = stationary_distribution(&f).unwrap();
        let sigma = entropy_production_rate(&f, &p).unwrap();
        let t_end = 2.5;
        let total = total_entropy_production(&f, &p, t_end, 101).unwrap();
        assert!(
            (total - t_end * sigma).abs() < 1e-8,
            "total {total} vs T*sigma {}",
            t_end * sigma
        );
    }

    #[test]
    fn total_entropy_zero_at_equilibrium() {
        let f = dfr_rate_matrix(0.0, 1.0, 1.0);
        let p = stationary_distribution(&f).unwrap();
        let total = total_entropy_production(&f, &p, 2.5, 51).unwrap();
        assert!(total.abs() < 1e-10);
    }

    #[test]
    fn total_entropy_quadrature_self_convergence() {
        // Richardson-style refinement: double n_quad until the value is
        // stable, then require the coarse call to match.
        let f = dfr_rate_matrix(1.0, 1.0, 1.0);
        let p0 = ProbabilityVector::uniform(6);
        let mut n = 64;
        let mut prev = total_entropy_production(&f, &p0, 2.5, n + 1).unwrap();
        loop {
            n *= 2;
            let next = total_entropy_production(&f, &p0, 2.5, n + 1).unwrap();
            if (next - prev).abs() < 1e-6 {
                prev = next;
                break;
            }
            prev = next;
            assert!(n < 1 << 22, "quadrature failed to converge");
        }
        let coarse = total_entropy_production(&f, &p0, 2.5, 2049).unwrap();
        assert!((coarse - prev).abs() < 1e-5);
    }

    #[test]
    fn observable_report_bundles_consistently() {
        let f = dfr_rate_matrix(1.0, 1.0, 1.0);
        let rep = observable_report(&f).unwrap();
        assert_eq!(rep.stationary.dim(), 6);
        assert_eq!(rep.timescales.len(), 5);
        assert_eq!(rep.mfpt.len(), 36);
        for i in 0..6 {
            assert_eq!(rep.mfpt[i * 6 + i], 0.0);
        }
        assert!(rep.timescales.windows(2).all(|w| w[0] >= w[1]));
    }
}
