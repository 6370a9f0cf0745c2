use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Model hyperparameters. Defaults follow the reference configuration
/// used across all experiments.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    pub word_dim: usize,
    pub pos_dim: usize,
    pub cluster_dim: usize,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub layers: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub pretrain_grad_clip: f64,
    pub l2: f64,
    pub mc_samples: usize,
    pub epsilon: f64,
    /// Lexicalized models consume and regenerate word tokens; unlexicalized
    /// models operate on gold POS tags only.
    pub lexicalized: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            word_dim: 80,
            pos_dim: 80,
            cluster_dim: 0,
            encoder_hidden: 64,
            decoder_hidden: 64,
            layers: 1,
            dropout: 0.5,
            learning_rate: 0.01,
            grad_clip: 0.25,
            pretrain_grad_clip: 0.5,
            l2: 1e-4,
            mc_samples: 20,
            epsilon: 0.1,
            lexicalized: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pos_dim == 0
            || self.encoder_hidden == 0
            || self.decoder_hidden == 0
            || self.layers == 0
            || self.mc_samples == 0
        {
            return Err(Error::Config("dimensions, layers and mc_samples must be positive".into()));
        }
        if self.lexicalized && self.word_dim == 0 {
            return Err(Error::Config("lexicalized model requires word_dim > 0".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.learning_rate <= 0.0
            || self.grad_clip <= 0.0
            || self.pretrain_grad_clip <= 0.0
            || self.l2 < 0.0
            || self.epsilon <= 0.0
        {
            return Err(Error::Config("rates, clips and epsilon must be positive".into()));
        }
        Ok(())
    }

    /// Dimension of the per-token input embedding fed to the encoder stack.
    pub fn encoder_input_dim(&self) -> usize {
        if self.lexicalized {
            self.word_dim + self.pos_dim + self.cluster_dim
        } else {
            self.pos_dim
        }
    }

    /// Dimension of the embedding of tokens the decoder regenerates (words
    /// when lexicalized, POS tags otherwise).
    pub fn decoder_input_dim(&self) -> usize {
        if self.lexicalized {
            self.word_dim
        } else {
            self.pos_dim
        }
    }
}
