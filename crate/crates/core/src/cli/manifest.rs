use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Written next to every command's artifacts. `config` holds the fully
/// resolved settings, so passing the manifest back as `--config` repeats
/// the command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config_path: Option<PathBuf>,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, PathBuf>,
    pub artifacts: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub notes: Vec<String>,
    /// Seconds since the Unix epoch.
    pub started_at: f64,
    pub finished_at: f64,
}

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

impl RunManifest {
    pub fn begin<C: Serialize>(command: &str, config_path: Option<&Path>, config: &C) -> Result<Self> {
        Ok(RunManifest {
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_path: config_path.map(Path::to_path_buf),
            config: serde_json::to_value(config)?,
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            notes: Vec::new(),
            started_at: unix_now(),
            finished_at: 0.0,
        })
    }

    pub fn input(&mut self, name: &str, path: &Path) {
        self.inputs.insert(name.into(), path.to_path_buf());
    }

    pub fn artifact(&mut self, name: &str, path: &Path) {
        self.artifacts.insert(name.into(), path.to_path_buf());
    }

    pub fn finish(mut self, path: &Path) -> Result<()> {
        self.finished_at = unix_now();
        crate::preprocess::save_json(&self, path)
    }
}
