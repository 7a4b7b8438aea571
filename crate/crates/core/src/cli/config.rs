//! Resolved per-command configuration. Values come from defaults, then an
//! optional JSON file (a previous run manifest is accepted too), then flags.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowdata::{self, SplitSpec};
use crate::preprocess::ForestConfig;
use crate::synth::BlobSpec;
use crate::training::{ModelKind, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrepConfig {
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub label_column: String,
    pub benign_token: String,
    pub drop_list: Vec<String>,
    pub top_k: usize,
    /// Split fractions; the split seed is derived from `seed`.
    pub split: SplitSpec,
    /// Forest settings; `None` uses the defaults for the feature count.
    /// The forest seed is derived from `seed`.
    pub forest: Option<ForestConfig>,
    pub seed: u64,
}

impl Default for PrepConfig {
    fn default() -> Self {
        PrepConfig {
            input: None,
            out: None,
            label_column: flowdata::DEFAULT_LABEL_COLUMN.into(),
            benign_token: flowdata::DEFAULT_BENIGN_TOKEN.into(),
            drop_list: flowdata::default_drop_list(),
            top_k: 28,
            split: SplitSpec::default(),
            forest: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct TrainCmdConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Balanced subsample of the training split.
    pub train_n: Option<usize>,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl TrainCmdConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = self.train.problems();
        if let Some(n) = self.train_n {
            if n == 0 || n % 2 != 0 {
                out.push(format!("train_n {n} must be a positive even count"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    /// Both models × four regimes at the reduced size.
    #[default]
    Small,
    /// Both models × four regimes × {full, reduced}.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchCmdConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub runs: usize,
    pub grid: GridKind,
    pub reduced_n: usize,
    pub models: Vec<ModelKind>,
    pub base_seed: u64,
    /// Every run of a cell uses `base_seed`.
    pub same_seed: bool,
    pub jobs: Option<usize>,
    /// Template for every cell; regime, model and seed are set per run.
    #[serde(flatten)]
    pub template: TrainConfig,
}

impl Default for BenchCmdConfig {
    fn default() -> Self {
        BenchCmdConfig {
            data: None,
            out: None,
            runs: 30,
            grid: GridKind::Small,
            reduced_n: 100,
            models: vec![ModelKind::Mlp, ModelKind::MlpAttention],
            base_seed: 0,
            same_seed: false,
            jobs: None,
            template: TrainConfig::default(),
        }
    }
}

impl BenchCmdConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = self.template.problems();
        if self.runs < 2 {
            out.push(format!("runs {} must be at least 2", self.runs));
        }
        if self.reduced_n == 0 || !self.reduced_n.is_multiple_of(2) {
            out.push(format!("reduced_n {} must be a positive even count", self.reduced_n));
        }
        if self.models.is_empty() {
            out.push("models must not be empty".into());
        }
        if self.jobs == Some(0) {
            out.push("jobs must be positive".into());
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthCmdConfig {
    pub out: Option<PathBuf>,
    #[serde(flatten)]
    pub blobs: BlobSpec,
    /// Split fractions; the split seed is derived from the blob seed.
    pub split: SplitSpec,
}

/// Reads a JSON config. A run manifest is unwrapped to its `config` field.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut value: serde_json::Value = serde_json::from_str(&text)?;
    if value.get("tool_version").is_some() {
        if let Some(inner) = value.get_mut("config") {
            value = inner.take();
        }
    }
    Ok(serde_json::from_value(value)?)
}
