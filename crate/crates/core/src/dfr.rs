//! The six-state discrete flashing ratchet benchmark process: a particle
//! on a three-site ring under an asymmetric potential of height parameter
//! `V` that switches on and off at rate `r`; with the potential off the
//! particle diffuses freely at rate `b`.
//!
//! States 0..2 are the potential-on ring sites, states 3..5 the
//! potential-off copies.

use crate::types::RateMatrix;

/// Rate matrix of the discrete flashing ratchet.
///
/// On-block rates `F[i][j] = exp(-V (j - i) / 2)` for `i, j in {0,1,2}`;
/// off-block rates all equal `b`; switching rates `F[i][i+3] =
/// F[i+3][i] = r`. Diagonal entries normalize the rows.
pub fn dfr_rate_matrix(v: f64, r: f64, b: f64) -> RateMatrix {
    assert!(r >= 0.0 && b >= 0.0, "switching and diffusion rates must be >= 0");
    assert!(v.is_finite() && r.is_finite() && b.is_finite());
    RateMatrix::from_off_diagonal(6, |i, j| {
        let on_i = i < 3;
        let on_j = j < 3;
        match (on_i, on_j) {
            (true, true) => (-v * (j as f64 - i as f64) / 2.0).exp(),
            (false, false) => b,
            _ => {
                if j == i + 3 || i == j + 3 {
                    r
                } else {
                    0.0
                }
            }
        }
    })
    .expect("DFR construction always yields a valid rate matrix")
}
