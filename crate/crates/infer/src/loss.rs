//! Training objective: Gaussian negative log-likelihood on present links,
//! a weighted squared penalty on absent links, and cross-entropy on the
//! initial distribution; averaged over the batch.

use ndarray::Array2;

use crate::net::BatchTargets;

/// Loss value plus its gradients on the three head outputs.
pub struct LossGrads {
    pub loss: f64,
    pub d_phi_rate: Array2<f64>,
    pub d_phi_var: Array2<f64>,
    pub d_phi_init: Array2<f64>,
}

/// Evaluate the objective for head outputs in normalized units.
///
/// Per record, summed over ordered state pairs:
/// present links contribute `(f - f_hat)^2 / (2 Var) + log(Var) / 2`,
/// absent links contribute `lambda * (f_hat^2 + Var)`; the initial
/// distribution adds `-sum_i pi_i log pihat_i`. The result is the mean
/// over the batch. `f_hat = exp(phi_rate)`, `Var = exp(phi_var)` and
/// `pihat = softmax(phi_init)`.
pub fn loss_and_head_grads(
    phi_rate: &Array2<f64>,
    phi_var: &Array2<f64>,
    phi_init: &Array2<f64>,
    targets: &BatchTargets,
    lambda: f64,
) -> LossGrads {
    let n_records = phi_rate.nrows();
    let scale = 1.0 / n_records as f64;
    let mut loss = 0.0;
    let mut d_rate = Array2::zeros(phi_rate.raw_dim());
    let mut d_var = Array2::zeros(phi_var.raw_dim());
    let mut d_init = Array2::zeros(phi_init.raw_dim());

    for b in 0..n_records {
        for m in 0..phi_rate.ncols() {
            let f_hat = phi_rate[[b, m]].exp();
            let var = phi_var[[b, m]].exp();
            if targets.present[[b, m]] == 1.0 {
                let f = targets.rates[[b, m]];
                let resid = f - f_hat;
                loss += scale * (resid * resid / (2.0 * var) + 0.5 * phi_var[[b, m]]);
                d_rate[[b, m]] = scale * (-resid / var) * f_hat;
                d_var[[b, m]] = scale * (0.5 - resid * resid / (2.0 * var));
            } else {
                loss += scale * lambda * (f_hat * f_hat + var);
                d_rate[[b, m]] = scale * lambda * 2.0 * f_hat * f_hat;
                d_var[[b, m]] = scale * lambda * var;
            }
        }

        // Cross-entropy through a stable log-softmax.
        let row = phi_init.row(b);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
        let target_mass: f64 = targets.pi0.row(b).sum();
        for i in 0..row.len() {
            let pi = targets.pi0[[b, i]];
            if pi > 0.0 {
                loss += scale * pi * (log_z - row[i]);
            }
            let softmax = (row[i] - log_z).exp();
            d_init[[b, i]] = scale * (softmax * target_mass - pi);
        }
    }

    LossGrads {
        loss,
        d_phi_rate: d_rate,
        d_phi_var: d_var,
        d_phi_init: d_init,
    }
}
