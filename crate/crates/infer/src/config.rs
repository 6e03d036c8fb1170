//! Model and training configuration with the reference defaults:
//! encoder hidden width 256, learnable-query attention with q = 16 query
//! slots of width d_k = 128 over 4 heads, two 128-wide layers per output
//! head, AdamW with learning rate and weight decay 1e-4, batch size 128.

use serde::{Deserialize, Serialize};

use crate::error::{InferError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Largest supported state count; token width is `c_max + 2`.
    pub c_max: usize,
    /// Hidden width of each direction of the recurrent path encoder.
    pub encoder_hidden: usize,
    /// Number of learnable query slots.
    pub query_count: usize,
    /// Key/value width per attention head.
    pub key_width: usize,
    /// Attention head count.
    pub head_count: usize,
    /// Hidden layer widths of the three output heads.
    pub head_widths: Vec<usize>,
    /// Missing-link regularizer weight.
    pub lambda: f64,
    /// Longest supported series (grid cap).
    pub l_max: usize,
    /// Largest path count per forward pass (prediction batching cap).
    pub k_max: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            c_max: 6,
            encoder_hidden: 256,
            query_count: 16,
            key_width: 128,
            head_count: 4,
            head_widths: vec![128, 128],
            lambda: 1.0,
            l_max: 100,
            k_max: 300,
        }
    }
}

impl ModelConfig {
    /// Token width: one-hot state plus observation time and inter-event time.
    pub fn token_width(&self) -> usize {
        self.c_max + 2
    }

    /// Width of one series embedding (both encoder directions).
    pub fn embedding_width(&self) -> usize {
        2 * self.encoder_hidden
    }

    /// Width of the global representation produced by the attention.
    pub fn representation_width(&self) -> usize {
        self.head_count * self.query_count * self.key_width
    }

    /// Number of modeled off-diagonal rate entries.
    pub fn off_diagonal_count(&self) -> usize {
        self.c_max * (self.c_max - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_max < 2 || self.c_max > mjp_core::MAX_STATES {
            return Err(InferError::BadConfig(format!(
                "c_max {} outside 2..={}",
                self.c_max,
                mjp_core::MAX_STATES
            )));
        }
        for (name, v) in [
            ("encoder_hidden", self.encoder_hidden),
            ("query_count", self.query_count),
            ("key_width", self.key_width),
            ("head_count", self.head_count),
            ("l_max", self.l_max),
            ("k_max", self.k_max),
        ] {
            if v == 0 {
                return Err(InferError::BadConfig(format!("{name} must be positive")));
            }
        }
        if self.head_widths.is_empty() || self.head_widths.iter().any(|&w| w == 0) {
            return Err(InferError::BadConfig("head_widths must be non-empty and positive".into()));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(InferError::BadConfig(format!("lambda {} must be >= 0", self.lambda)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Held-out fraction of records used for validation.
    pub val_fraction: f64,
    pub seed: u64,
    /// Wall-clock training budget; stops after the current epoch.
    pub max_seconds: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            batch_size: 128,
            max_epochs: 100,
            patience: 10,
            val_fraction: 0.1,
            seed: 0,
            max_seconds: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(InferError::BadConfig(
                "learning_rate must be > 0 and weight_decay >= 0".into(),
            ));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(InferError::BadConfig("batch_size and max_epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(InferError::BadConfig(format!(
                "val_fraction {} outside [0, 1)",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_settings() {
        let m = ModelConfig::default();
        assert_eq!(m.encoder_hidden, 256);
        assert_eq!(m.query_count, 16);
        assert_eq!(m.key_width, 128);
        assert_eq!(m.head_count, 4);
        assert_eq!(m.head_widths, vec![128, 128]);
        assert_eq!(m.lambda, 1.0);
        assert_eq!(m.l_max, 100);
        assert_eq!(m.k_max, 300);
        assert_eq!(m.token_width(), 8);
        m.validate().unwrap();

        let t = TrainConfig::default();
        assert_eq!(t.learning_rate, 1e-4);
        assert_eq!(t.weight_decay, 1e-4);
        assert_eq!(t.batch_size, 128);
        t.validate().unwrap();
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut m = ModelConfig::default();
        m.head_count = 0;
        assert!(m.validate().is_err());
        let mut t = TrainConfig::default();
        t.val_fraction = 1.0;
        assert!(t.validate().is_err());
    }
}
