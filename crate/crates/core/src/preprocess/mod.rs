//! Robust scaling and forest-based feature selection.

mod forest;
mod scaler;

pub use forest::{
    fit_random_forest_importance, fit_random_forest_importance_with, select_top_k, ForestConfig, ImportanceReport,
    SelectionMask,
};
pub use scaler::{apply_robust_scaler, fit_robust_scaler, quantile, ScalerParams, IQR_GUARD};

use std::path::Path;

use serde::{de::DeserializeOwned, Serialize};

use crate::error::{Error, Result};

pub(crate) fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub(crate) fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
