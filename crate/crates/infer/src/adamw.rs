//! AdamW: adaptive moments with decoupled weight decay.

use ndarray::Array2;

use crate::net::NetParams;

pub struct AdamW {
    pub learning_rate: f64,
    pub weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl AdamW {
    pub fn new(params: &NetParams, learning_rate: f64, weight_decay: f64) -> Self {
        let shapes: Vec<Array2<f64>> = params
            .named_tensors()
            .iter()
            .map(|(_, t)| Array2::zeros(t.raw_dim()))
            .collect();
        Self {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.clone(),
            v: shapes,
        }
    }

    pub fn step(&mut self, params: &mut NetParams, grads: &NetParams) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let lr = self.learning_rate;
        let wd = self.weight_decay;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);

        let grad_tensors: Vec<&Array2<f64>> =
            grads.named_tensors().into_iter().map(|(_, t)| t).collect();
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grad_tensors)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            ndarray::Zip::from(&mut *p)
                .and(g)
                .and(&mut *m)
                .and(&mut *v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * *p);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            c_max: 2,
            encoder_hidden: 4,
            query_count: 2,
            key_width: 3,
            head_count: 1,
            head_widths: vec![4],
            l_max: 4,
            k_max: 4,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn descends_along_negative_gradient() {
        let config = tiny_config();
        let mut params = NetParams::init(&config, 1);
        let before = params.fwd.wx[[0, 0]];
        let mut grads = params.zeros_like();
        grads.fwd.wx[[0, 0]] = 1.0;
        let mut opt = AdamW::new(&params, 1e-2, 0.0);
        opt.step(&mut params, &grads);
        assert!(params.fwd.wx[[0, 0]] < before);
    }

    #[test]
    fn weight_decay_shrinks_parameters_without_gradient() {
        let config = tiny_config();
        let mut params = NetParams::init(&config, 2);
        let before = params.fwd.wh[[1, 1]];
        let grads = params.zeros_like();
        let mut opt = AdamW::new(&params, 1e-2, 0.1);
        opt.step(&mut params, &grads);
        let after = params.fwd.wh[[1, 1]];
        assert!((after - before * (1.0 - 1e-2 * 0.1)).abs() < 1e-12);
    }
}
