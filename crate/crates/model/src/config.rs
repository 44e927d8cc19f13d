use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::tokenizer::MIN_VOCAB;

/// Dimensions and init seed of the toy decoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Byte vocabulary plus special tokens; at least 260.
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < MIN_VOCAB {
            return Err(ModelError::InvalidConfig(format!(
                "vocab_size {} is below the byte vocab plus specials ({MIN_VOCAB})",
                self.vocab_size
            )));
        }
        if self.n_heads == 0 || self.d_model == 0 || self.n_layers == 0 || self.d_ff == 0 {
            return Err(ModelError::InvalidConfig("all dimensions must be nonzero".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_seq_len == 0 {
            return Err(ModelError::InvalidConfig("max_seq_len must be nonzero".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ModelConfig {
        ModelConfig {
            vocab_size: 260,
            d_model: 16,
            n_layers: 2,
            n_heads: 2,
            d_ff: 32,
            max_seq_len: 64,
            seed: 0,
        }
    }

    #[test]
    fn valid_config_passes() {
        base().validate().unwrap();
    }

    #[test]
    fn rejects_small_vocab() {
        let cfg = ModelConfig { vocab_size: 259, ..base() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rejects_indivisible_heads() {
        let cfg = ModelConfig { n_heads: 3, ..base() };
        assert!(cfg.validate().is_err());
    }
}
