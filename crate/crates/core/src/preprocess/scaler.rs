use std::path::Path;

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowdata::LabeledDataset;

/// Divisor used in place of a zero interquartile range (center only).
pub const IQR_GUARD: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub medians: Vec<f64>,
    pub iqrs: Vec<f64>,
    pub feature_names: Vec<String>,
}

impl ScalerParams {
    pub fn save(&self, path: &Path) -> Result<()> {
        super::save_json(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let p: ScalerParams = super::load_json(path)?;
        if p.medians.len() != p.iqrs.len() || p.iqrs.len() != p.feature_names.len() {
            return Err(Error::Shape("scaler vectors differ in length".into()));
        }
        if p.iqrs.iter().any(|&q| !(q > 0.0)) {
            return Err(Error::Decode("scaler iqr must be positive".into()));
        }
        Ok(p)
    }
}

/// Linear-interpolation quantile: position `h = q (n - 1)` on the sorted values.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("quantile of an empty vector".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Config(format!("quantile level {q} outside [0,1]")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("quantile input".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    Ok(quantile_sorted(&sorted, q))
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn fit_robust_scaler(ds: &LabeledDataset) -> Result<ScalerParams> {
    if ds.n_rows() == 0 {
        return Err(Error::Empty("cannot fit a scaler on zero rows".into()));
    }
    let mut medians = Vec::with_capacity(ds.n_features());
    let mut iqrs = Vec::with_capacity(ds.n_features());
    for col in ds.features.axis_iter(Axis(1)) {
        let mut sorted = col.to_vec();
        sorted.sort_unstable_by(f64::total_cmp);
        medians.push(quantile_sorted(&sorted, 0.5));
        let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
        iqrs.push(if iqr == 0.0 { IQR_GUARD } else { iqr });
    }
    Ok(ScalerParams { medians, iqrs, feature_names: ds.feature_names.clone() })
}

/// `x -> (x - median) / iqr` per column.
pub fn apply_robust_scaler(ds: &LabeledDataset, p: &ScalerParams) -> Result<LabeledDataset> {
    if ds.feature_names != p.feature_names {
        return Err(Error::Shape(format!(
            "scaler fitted on {} columns does not match dataset columns ({})",
            p.feature_names.len(),
            ds.n_features()
        )));
    }
    let mut out = ds.clone();
    for (mut col, (m, q)) in out.features.axis_iter_mut(Axis(1)).zip(p.medians.iter().zip(&p.iqrs)) {
        col.mapv_inplace(|x| (x - m) / q);
    }
    out.provenance.push("robust-scaled".into());
    Ok(out)
}
