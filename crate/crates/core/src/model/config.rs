use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub latent_dim: usize,
    /// Token width; `None` means the sum of all scale dims, rounded up to a
    /// multiple of `heads`.
    pub token_dim: Option<usize>,
    pub encoder_layers: usize,
    /// Feed-forward width inside encoder blocks.
    pub encoder_hidden: usize,
    /// Hidden layer count of the pointwise base decoder.
    pub decoder_layers: usize,
    pub decoder_hidden: usize,
    /// Attention width of the set decoders.
    pub set_width: usize,
    pub set_layers: usize,
    pub heads: usize,
    pub kl_weight: f64,
    /// Likelihood weight per scale, coarsest first; empty means all ones.
    pub scale_weights: Vec<f64>,
    /// Add fixed sinusoidal position codes to the encoder sequence.
    pub encoder_positions: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 2,
            token_dim: None,
            encoder_layers: 2,
            encoder_hidden: 64,
            decoder_layers: 2,
            decoder_hidden: 64,
            set_width: 32,
            set_layers: 1,
            heads: 4,
            kl_weight: 1.0,
            scale_weights: Vec::new(),
            encoder_positions: false,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn resolved_token_dim(&self, scale_dims: &[usize]) -> usize {
        self.token_dim.unwrap_or_else(|| {
            let sum: usize = scale_dims.iter().sum();
            sum.div_ceil(self.heads.max(1)) * self.heads.max(1)
        })
    }

    pub fn scale_weight(&self, level: usize) -> f64 {
        self.scale_weights.get(level).copied().unwrap_or(1.0)
    }

    pub fn validate(&self, scale_dims: &[usize]) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Config("latent dim must be at least 1".into()));
        }
        if self.heads == 0 {
            return Err(Error::Config("need at least one attention head".into()));
        }
        let token = self.resolved_token_dim(scale_dims);
        let max_dim = scale_dims.iter().copied().max().unwrap_or(0);
        if token < max_dim {
            return Err(Error::Config(format!("token dim {token} below largest scale dim {max_dim}")));
        }
        if token % self.heads != 0 || self.set_width % self.heads != 0 {
            return Err(Error::Config(format!(
                "token dim {token} and set width {} must be multiples of {} heads",
                self.set_width, self.heads
            )));
        }
        if !self.scale_weights.is_empty() && self.scale_weights.len() != scale_dims.len() {
            return Err(Error::Config(format!(
                "{} scale weights for {} scales",
                self.scale_weights.len(),
                scale_dims.len()
            )));
        }
        if self.kl_weight < 0.0 || self.scale_weights.iter().any(|w| *w < 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_dim_defaults_to_sum() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.resolved_token_dim(&[8, 16]), 24);
        assert_eq!(cfg.resolved_token_dim(&[52, 16]), 68);
        assert_eq!(cfg.resolved_token_dim(&[3, 2]), 8);
        cfg.validate(&[8, 16]).unwrap();
    }

    #[test]
    fn rejects_bad_configs() {
        let zero = ModelConfig {
            latent_dim: 0,
            ..ModelConfig::default()
        };
        assert!(zero.validate(&[8, 16]).is_err());
        let narrow = ModelConfig {
            token_dim: Some(8),
            ..ModelConfig::default()
        };
        assert!(narrow.validate(&[8, 16]).is_err());
        let weights = ModelConfig {
            scale_weights: vec![1.0],
            ..ModelConfig::default()
        };
        assert!(weights.validate(&[8, 16]).is_err());
    }
}
