use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    /// Two-way classification head on top of the last hidden layer.
    Logits,
    /// The last hidden activations are the output.
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_mode: OutputMode,
    pub use_attention: bool,
    pub dropout_p: f64,
    pub batchnorm_momentum: f64,
    pub batchnorm_eps: f64,
    pub attention_eps: f64,
    pub init_seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            input_dim: 28,
            hidden_dims: vec![64, 32],
            output_mode: OutputMode::Logits,
            use_attention: false,
            dropout_p: 0.2,
            batchnorm_momentum: 0.1,
            batchnorm_eps: 1e-5,
            attention_eps: 1e-9,
            init_seed: 0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be at least 1".into()));
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(Error::Config(format!(
                "hidden_dims must be non-empty and positive, got {:?}",
                self.hidden_dims
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p {} outside [0,1)", self.dropout_p)));
        }
        if !(0.0..=1.0).contains(&self.batchnorm_momentum) {
            return Err(Error::Config("batchnorm_momentum outside [0,1]".into()));
        }
        if !(self.batchnorm_eps > 0.0) || !(self.attention_eps >= 0.0) {
            return Err(Error::Config("normalization eps values must be positive".into()));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        match self.output_mode {
            OutputMode::Logits => 2,
            OutputMode::Embedding => *self.hidden_dims.last().expect("validated"),
        }
    }
}
