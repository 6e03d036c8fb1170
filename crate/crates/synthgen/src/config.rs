//! Generator configuration: the priors over adjacency, rates, initial
//! conditions, observation grids and label noise, plus bulk quotas.

use serde::{Deserialize, Serialize};

use crate::error::{GenError, Result};

/// Quota of processes to generate at one state-space size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateQuota {
    pub states: usize,
    pub count: usize,
}

/// Full configuration of the synthetic ensemble.
///
/// Defaults: six states maximum, 300 paths per process on the horizon
/// `[0, 10]`, a 100-point base grid, 1% label noise, Beta rate priors
/// with alpha in {1, 2} and beta in {1, 3, 5, 10}, Dirichlet(50) initial
/// conditions, strides {1, 2, 3, 4} and survival probabilities
/// {1/4, 1/2} for the grid subsampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub c_max: usize,
    pub state_counts: Vec<StateQuota>,
    pub n_processes: usize,
    pub paths_per_process: usize,
    pub horizon: f64,
    pub base_grid_len: usize,
    pub label_noise: f64,
    pub alpha_set: Vec<f64>,
    pub beta_set: Vec<f64>,
    pub dirichlet_concentration: f64,
    pub stride_set: Vec<usize>,
    pub survival_set: Vec<f64>,
    pub master_seed: u64,
    /// Also store the noiseless labels of every series.
    pub store_clean: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            c_max: 6,
            state_counts: vec![StateQuota { states: 6, count: 1 }],
            n_processes: 1,
            paths_per_process: 300,
            horizon: 10.0,
            base_grid_len: 100,
            label_noise: 0.01,
            alpha_set: vec![1.0, 2.0],
            beta_set: vec![1.0, 3.0, 5.0, 10.0],
            dirichlet_concentration: 50.0,
            stride_set: vec![1, 2, 3, 4],
            survival_set: vec![0.25, 0.5],
            master_seed: 0,
            store_clean: false,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c_max < 2 || self.c_max > mjp_core::MAX_STATES {
            return Err(GenError::BadConfig(format!(
                "c_max {} outside 2..={}",
                self.c_max,
                mjp_core::MAX_STATES
            )));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(GenError::BadConfig(format!("horizon {} must be > 0", self.horizon)));
        }
        if self.base_grid_len < 2 {
            return Err(GenError::BadConfig(format!(
                "base_grid_len {} must be >= 2",
                self.base_grid_len
            )));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(GenError::BadConfig(format!(
                "label_noise {} outside [0, 1]",
                self.label_noise
            )));
        }
        if self.paths_per_process == 0 {
            return Err(GenError::BadConfig("paths_per_process must be >= 1".into()));
        }
        if self.alpha_set.is_empty() || self.beta_set.is_empty() {
            return Err(GenError::BadConfig("alpha/beta sets must be non-empty".into()));
        }
        if self.stride_set.is_empty() || self.stride_set.iter().any(|&s| s == 0) {
            return Err(GenError::BadConfig("stride_set must hold positive strides".into()));
        }
        if self
            .survival_set
            .iter()
            .any(|&p| !(0.0 < p && p <= 1.0))
            || self.survival_set.is_empty()
        {
            return Err(GenError::BadConfig("survival_set must lie in (0, 1]".into()));
        }
        if !(self.dirichlet_concentration > 0.0) {
            return Err(GenError::BadConfig("dirichlet_concentration must be > 0".into()));
        }
        let quota_sum: usize = self.state_counts.iter().map(|q| q.count).sum();
        if quota_sum != self.n_processes {
            return Err(GenError::BadConfig(format!(
                "state-count quotas sum to {quota_sum}, expected n_processes = {}",
                self.n_processes
            )));
        }
        for q in &self.state_counts {
            if q.states < 2 || q.states > self.c_max {
                return Err(GenError::BadConfig(format!(
                    "quota state count {} outside 2..={}",
                    q.states, self.c_max
                )));
            }
        }
        Ok(())
    }

    /// State count of each record id, quota groups in listed order.
    pub fn state_count_of(&self, record_id: u64) -> Result<usize> {
        let mut offset = 0u64;
        for q in &self.state_counts {
            if record_id < offset + q.count as u64 {
                return Ok(q.states);
            }
            offset += q.count as u64;
        }
        Err(GenError::BadConfig(format!(
            "record id {record_id} beyond n_processes {}",
            self.n_processes
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_paper_defaults() {
        let c = GeneratorConfig::default();
        assert_eq!(c.c_max, 6);
        assert_eq!(c.paths_per_process, 300);
        assert_eq!(c.horizon, 10.0);
        assert_eq!(c.base_grid_len, 100);
        assert_eq!(c.label_noise, 0.01);
        assert_eq!(c.alpha_set, vec![1.0, 2.0]);
        assert_eq!(c.beta_set, vec![1.0, 3.0, 5.0, 10.0]);
        assert_eq!(c.dirichlet_concentration, 50.0);
        assert_eq!(c.stride_set, vec![1, 2, 3, 4]);
        assert_eq!(c.survival_set, vec![0.25, 0.5]);
        c.validate().unwrap();
    }

    #[test]
    fn quota_mismatch_is_rejected() {
        let mut c = GeneratorConfig::default();
        c.n_processes = 5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn record_ids_map_to_quota_groups() {
        let mut c = GeneratorConfig::default();
        c.state_counts = vec![
            StateQuota { states: 2, count: 3 },
            StateQuota { states: 5, count: 2 },
        ];
        c.n_processes = 5;
        c.validate().unwrap();
        assert_eq!(c.state_count_of(0).unwrap(), 2);
        assert_eq!(c.state_count_of(2).unwrap(), 2);
        assert_eq!(c.state_count_of(3).unwrap(), 5);
        assert!(c.state_count_of(5).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let c = GeneratorConfig::default();
        let text = toml::to_string(&c).unwrap();
        let back: GeneratorConfig = toml::from_str(&text).unwrap();
        assert_eq!(c, back);
    }
}
