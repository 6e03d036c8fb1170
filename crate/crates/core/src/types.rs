//! Domain types for homogeneous Markov jump processes.
//!
//! Convention used throughout: the rate matrix `F` acts on row vectors,
//! `dp/dt = p * F`, with `F[i][j]` the instantaneous rate of jumping
//! from state `i` to state `j` (off-diagonal entries non-negative, rows
//! summing to zero).

use crate::error::{CoreError, Result};

/// Largest supported state-space size.
pub const MAX_STATES: usize = 32;

/// Row-sum tolerance for rate matrices.
pub const RATE_ROW_SUM_TOL: f64 = 1e-12;

/// Normalization tolerance for probability vectors.
pub const PROB_SUM_TOL: f64 = 1e-9;

/// The c-by-c intensity matrix of a homogeneous MJP, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl RateMatrix {
    /// Build from a full row-major entry list, validating the generator
    /// invariants (non-negative off-diagonals, zero row sums, 2 <= dim <= 32).
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if dim < 2 || dim > MAX_STATES {
            return Err(CoreError::Invalid {
                what: "rate matrix",
                reason: format!("dim {dim} outside supported range 2..={MAX_STATES}"),
            });
        }
        if entries.len() != dim * dim {
            return Err(CoreError::DimMismatch {
                expected: dim * dim,
                got: entries.len(),
            });
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(CoreError::NonFinite {
                context: "rate matrix entries",
            });
        }
        for i in 0..dim {
            let mut row_sum = 0.0;
            for j in 0..dim {
                let v = entries[i * dim + j];
                if i != j && v < 0.0 {
                    return Err(CoreError::Invalid {
                        what: "rate matrix",
                        reason: format!("negative off-diagonal entry at ({i},{j}): {v}"),
                    });
                }
                row_sum += v;
            }
            if row_sum.abs() > RATE_ROW_SUM_TOL * (1.0 + max_abs(&entries)) {
                return Err(CoreError::Invalid {
                    what: "rate matrix",
                    reason: format!("row {i} sums to {row_sum}, expected 0"),
                });
            }
        }
        Ok(Self { dim, entries })
    }

    /// Build from off-diagonal rates only; the diagonal is set to the
    /// negative row sum. `off(i, j)` is queried for all ordered pairs i != j.
    pub fn from_off_diagonal<F>(dim: usize, off: F) -> Result<Self>
    where
        F: Fn(usize, usize) -> f64,
    {
        let mut entries = vec![0.0; dim * dim];
        for i in 0..dim {
            let mut row_sum = 0.0;
            for j in 0..dim {
                if i == j {
                    continue;
                }
                let v = off(i, j);
                entries[i * dim + j] = v;
                row_sum += v;
            }
            entries[i * dim + i] = -row_sum;
        }
        Self::new(dim, entries)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    /// Total exit rate out of state `i` (`-F[i][i]`).
    #[inline]
    pub fn exit_rate(&self, i: usize) -> f64 {
        -self.get(i, i)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.dim..(i + 1) * self.dim]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Largest absolute entry; used to scale numerical zero thresholds.
    pub fn max_abs(&self) -> f64 {
        max_abs(&self.entries)
    }
}

fn max_abs(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// A binary adjacency matrix with zero diagonal whose undirected support
/// is connected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyMatrix {
    dim: usize,
    entries: Vec<bool>,
}

impl AdjacencyMatrix {
    pub fn new(dim: usize, entries: Vec<bool>) -> Result<Self> {
        if dim < 2 || dim > MAX_STATES {
            return Err(CoreError::Invalid {
                what: "adjacency matrix",
                reason: format!("dim {dim} outside supported range 2..={MAX_STATES}"),
            });
        }
        if entries.len() != dim * dim {
            return Err(CoreError::DimMismatch {
                expected: dim * dim,
                got: entries.len(),
            });
        }
        for i in 0..dim {
            if entries[i * dim + i] {
                return Err(CoreError::Invalid {
                    what: "adjacency matrix",
                    reason: format!("non-zero diagonal at ({i},{i})"),
                });
            }
        }
        let a = Self { dim, entries };
        if !a.undirected_connected() {
            return Err(CoreError::Invalid {
                what: "adjacency matrix",
                reason: "undirected support is not connected".to_string(),
            });
        }
        Ok(a)
    }

    /// All off-diagonal links present.
    pub fn fully_connected(dim: usize) -> Self {
        let mut entries = vec![true; dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = false;
        }
        Self { dim, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.entries[i * self.dim + j]
    }

    /// BFS over the symmetrized link set.
    pub fn undirected_connected(&self) -> bool {
        undirected_connected(self.dim, |i, j| self.get(i, j))
    }
}

/// Connectivity of the undirected graph induced by `link(i,j) || link(j,i)`.
pub fn undirected_connected<F>(dim: usize, link: F) -> bool
where
    F: Fn(usize, usize) -> bool,
{
    let mut seen = vec![false; dim];
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for j in 0..dim {
            if !seen[j] && (link(i, j) || link(j, i)) {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.iter().all(|&s| s)
}

/// A probability vector over c states: non-negative entries summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector {
    weights: Vec<f64>,
}

impl ProbabilityVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(CoreError::Empty("probability vector"));
        }
        if weights.iter().any(|x| !x.is_finite()) {
            return Err(CoreError::NonFinite {
                context: "probability vector",
            });
        }
        if let Some(&w) = weights.iter().find(|&&w| w < 0.0) {
            return Err(CoreError::Invalid {
                what: "probability vector",
                reason: format!("negative weight {w}"),
            });
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(CoreError::Invalid {
                what: "probability vector",
                reason: format!("weights sum to {sum}, expected 1"),
            });
        }
        Ok(Self { weights })
    }

    /// Normalize arbitrary non-negative weights to a probability vector.
    pub fn from_unnormalized(weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(CoreError::Invalid {
                what: "probability vector",
                reason: format!("weights sum to {sum}, cannot normalize"),
            });
        }
        Self::new(weights.iter().map(|w| w / sum).collect())
    }

    pub fn uniform(dim: usize) -> Self {
        Self {
            weights: vec![1.0 / dim as f64; dim],
        }
    }

    /// Point mass on `state`.
    pub fn delta(dim: usize, state: usize) -> Self {
        let mut weights = vec![0.0; dim];
        weights[state] = 1.0;
        Self { weights }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.weights[i]
    }
}

/// A right-continuous piecewise-constant trajectory. The first event
/// records the initial state at `t_start`; later events are the jumps,
/// with strictly increasing times in `(t_start, t_end]` and consecutive
/// states distinct.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpPath {
    t_start: f64,
    t_end: f64,
    events: Vec<(f64, usize)>,
}

impl JumpPath {
    pub fn new(t_start: f64, t_end: f64, events: Vec<(f64, usize)>) -> Result<Self> {
        if !(t_end > t_start) || !t_start.is_finite() || !t_end.is_finite() {
            return Err(CoreError::Invalid {
                what: "jump path",
                reason: format!("invalid window [{t_start}, {t_end}]"),
            });
        }
        match events.first() {
            None => return Err(CoreError::Empty("jump path events")),
            Some(&(t0, _)) if t0 != t_start => {
                return Err(CoreError::Invalid {
                    what: "jump path",
                    reason: format!("first event at {t0}, expected t_start {t_start}"),
                })
            }
            _ => {}
        }
        for w in events.windows(2) {
            let (t_prev, s_prev) = w[0];
            let (t, s) = w[1];
            if !(t > t_prev) || t > t_end {
                return Err(CoreError::Invalid {
                    what: "jump path",
                    reason: format!("event time {t} not strictly inside ({t_prev}, {t_end}]"),
                });
            }
            if s == s_prev {
                return Err(CoreError::Invalid {
                    what: "jump path",
                    reason: format!("self jump into state {s} at time {t}"),
                });
            }
        }
        Ok(Self {
            t_start,
            t_end,
            events,
        })
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn events(&self) -> &[(f64, usize)] {
        &self.events
    }

    pub fn initial_state(&self) -> usize {
        self.events[0].1
    }

    pub fn num_jumps(&self) -> usize {
        self.events.len() - 1
    }

    /// State at time `t` under the right-continuity convention: the state
    /// set by the last event with time <= t.
    pub fn state_at(&self, t: f64) -> Result<usize> {
        if t < self.t_start || t > self.t_end {
            return Err(CoreError::Invalid {
                what: "observation time",
                reason: format!("t = {t} outside path span [{}, {}]", self.t_start, self.t_end),
            });
        }
        let idx = self.events.partition_point(|&(et, _)| et <= t);
        Ok(self.events[idx - 1].1)
    }
}

/// A discretely observed series: strictly increasing observation times
/// with one state label per time.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedSeries {
    times: Vec<f64>,
    labels: Vec<usize>,
}

impl ObservedSeries {
    pub fn new(times: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if times.is_empty() {
            return Err(CoreError::Empty("observed series"));
        }
        if times.len() != labels.len() {
            return Err(CoreError::DimMismatch {
                expected: times.len(),
                got: labels.len(),
            });
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(CoreError::NonFinite {
                context: "observation times",
            });
        }
        for w in times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(CoreError::Invalid {
                    what: "observed series",
                    reason: format!("times not strictly increasing at {} -> {}", w[0], w[1]),
                });
            }
        }
        Ok(Self { times, labels })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn max_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Largest label plus one.
    pub fn max_state_plus_one(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| m + 1)
    }
}

/// Derived physical observables of a rate matrix.
#[derive(Debug, Clone)]
pub struct ObservableReport {
    /// Long-run occupancy law.
    pub stationary: ProbabilityVector,
    /// Decay timescales, descending.
    pub timescales: Vec<f64>,
    /// Whether the slowest mode carries an oscillation.
    pub oscillatory: bool,
    /// Mean first-passage times, row-major c-by-c with zero diagonal.
    pub mfpt: Vec<f64>,
}
