use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::flowdata::LabeledDataset;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub features_per_split: usize,
    pub min_samples_leaf: usize,
    pub seed: u64,
    /// Bootstrap sample size per tree; `None` draws `n_rows`.
    #[serde(default)]
    pub max_samples: Option<usize>,
    /// `false` grows every tree on all rows, in order.
    #[serde(default = "default_bootstrap")]
    pub bootstrap: bool,
}

fn default_bootstrap() -> bool {
    true
}

impl ForestConfig {
    /// Defaults for `n_features` inputs: 100 trees, depth 12, `ceil(sqrt(d))`
    /// candidate features per split, leaves of at least 5 rows.
    pub fn for_features(n_features: usize) -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: 12,
            features_per_split: ((n_features as f64).sqrt().ceil() as usize).max(1),
            min_samples_leaf: 5,
            seed: 0,
            max_samples: None,
            bootstrap: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.max_depth == 0 || self.features_per_split == 0 {
            return Err(Error::Config(format!("degenerate forest config {self:?}")));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::Config("min_samples_leaf must be at least 1".into()));
        }
        if self.max_samples == Some(0) {
            return Err(Error::Config("max_samples must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub importances: Vec<f64>,
    pub ranking: Vec<usize>,
}

impl ImportanceReport {
    /// Ranks by descending importance, ties to the lower index.
    pub fn from_importances(importances: Vec<f64>) -> Self {
        let mut ranking: Vec<usize> = (0..importances.len()).collect();
        ranking.sort_by(|&a, &b| importances[b].total_cmp(&importances[a]).then(a.cmp(&b)));
        ImportanceReport { importances, ranking }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionMask {
    pub selected_indices: Vec<usize>,
    pub k: usize,
    /// Names of the selected columns, in selection order.
    #[serde(default)]
    pub feature_names: Vec<String>,
}

impl SelectionMask {
    pub fn apply(&self, ds: &LabeledDataset) -> Result<LabeledDataset> {
        if let Some(&bad) = self.selected_indices.iter().find(|&&i| i >= ds.n_features()) {
            return Err(Error::Shape(format!("selected index {bad} out of range for {} features", ds.n_features())));
        }
        let out = ds.select_columns(&self.selected_indices);
        if !self.feature_names.is_empty() && out.feature_names != self.feature_names {
            return Err(Error::Shape("selection names do not match dataset columns".into()));
        }
        Ok(out.with_note(format!("selected top {} features", self.k)))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        super::save_json(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: SelectionMask = super::load_json(path)?;
        if m.selected_indices.len() != m.k {
            return Err(Error::Decode("selection length differs from k".into()));
        }
        Ok(m)
    }
}

pub fn select_top_k(report: &ImportanceReport, k: usize) -> Result<SelectionMask> {
    if k == 0 || k > report.ranking.len() {
        return Err(Error::Config(format!("k = {k} must lie in 1..={}", report.ranking.len())));
    }
    Ok(SelectionMask { selected_indices: report.ranking[..k].to_vec(), k, feature_names: Vec::new() })
}

pub fn fit_random_forest_importance(ds: &LabeledDataset, cfg: &ForestConfig) -> Result<ImportanceReport> {
    fit_random_forest_importance_with(ds, cfg, Exec::default())
}

/// Mean decrease in Gini impurity over a bagged CART ensemble.
///
/// Tree `t` draws from its own stream seeded `cfg.seed + t`, so the report is
/// identical under either execution policy.
pub fn fit_random_forest_importance_with(
    ds: &LabeledDataset,
    cfg: &ForestConfig,
    exec: Exec,
) -> Result<ImportanceReport> {
    cfg.validate()?;
    let [neg, pos] = ds.class_counts();
    if neg == 0 || pos == 0 {
        return Err(Error::Insufficient("forest importance needs both classes".into()));
    }
    if ds.n_rows() < 2 * cfg.min_samples_leaf {
        return Err(Error::Insufficient(format!(
            "{} rows cannot fill two leaves of {}",
            ds.n_rows(),
            cfg.min_samples_leaf
        )));
    }
    let d = ds.n_features();
    let per_tree = exec.map_range(cfg.n_trees, |t| grow_tree(ds, cfg, cfg.seed.wrapping_add(t as u64)));
    let mut total = vec![0.0; d];
    for tree in &per_tree {
        for (acc, v) in total.iter_mut().zip(tree) {
            *acc += v;
        }
    }
    let n_trees = cfg.n_trees as f64;
    total.iter_mut().for_each(|v| *v /= n_trees);
    let sum: f64 = total.iter().sum();
    if sum > 0.0 {
        total.iter_mut().for_each(|v| *v /= sum);
    } else {
        // no split anywhere in the ensemble
        total.iter_mut().for_each(|v| *v = 1.0 / d as f64);
    }
    Ok(ImportanceReport::from_importances(total))
}

fn gini(n0: usize, n1: usize) -> f64 {
    let n = (n0 + n1) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let (p0, p1) = (n0 as f64 / n, n1 as f64 / n);
    1.0 - p0 * p0 - p1 * p1
}

struct Split {
    feature: usize,
    threshold: f64,
    child_impurity: f64,
}

/// Grows one tree and returns its unnormalized per-feature impurity decrease.
fn grow_tree(ds: &LabeledDataset, cfg: &ForestConfig, seed: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed);
    let n = ds.n_rows();
    let sample: Vec<usize> = if cfg.bootstrap {
        (0..cfg.max_samples.unwrap_or(n)).map(|_| rng.gen_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let n_boot = sample.len();
    let d = ds.n_features();
    let m = cfg.features_per_split.min(d);
    let mut importance = vec![0.0; d];
    let mut feature_pool: Vec<usize> = (0..d).collect();
    let mut pairs: Vec<(f64, u8)> = Vec::new();
    let mut candidates: Vec<usize> = Vec::with_capacity(m);

    let mut stack = vec![(sample, 0usize)];
    while let Some((idx, depth)) = stack.pop() {
        let n1 = idx.iter().filter(|&&i| ds.labels[i] == 1).count();
        let n0 = idx.len() - n1;
        let node_gini = gini(n0, n1);
        if depth >= cfg.max_depth || idx.len() < 2 * cfg.min_samples_leaf || node_gini == 0.0 {
            continue;
        }
        // partial Fisher-Yates: the first m entries are the candidates
        for i in 0..m {
            let j = rng.gen_range(i..d);
            feature_pool.swap(i, j);
        }
        // equal impurities go to the lowest feature index, then threshold
        candidates.clear();
        candidates.extend_from_slice(&feature_pool[..m]);
        candidates.sort_unstable();
        let mut best: Option<Split> = None;
        for &f in &candidates {
            pairs.clear();
            pairs.extend(idx.iter().map(|&i| (ds.features[[i, f]], ds.labels[i])));
            pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            let total = pairs.len();
            let (mut l0, mut l1) = (0usize, 0usize);
            for s in 0..total - 1 {
                if pairs[s].1 == 1 {
                    l1 += 1;
                } else {
                    l0 += 1;
                }
                let left = s + 1;
                if left < cfg.min_samples_leaf || total - left < cfg.min_samples_leaf {
                    continue;
                }
                if pairs[s].0 == pairs[s + 1].0 {
                    continue;
                }
                let (r0, r1) = (n0 - l0, n1 - l1);
                let child = (left as f64 * gini(l0, l1) + (total - left) as f64 * gini(r0, r1)) / total as f64;
                if best.as_ref().is_none_or(|b| child < b.child_impurity) {
                    best = Some(Split {
                        feature: f,
                        threshold: 0.5 * (pairs[s].0 + pairs[s + 1].0),
                        child_impurity: child,
                    });
                }
            }
        }
        let Some(split) = best else { continue };
        let decrease = node_gini - split.child_impurity;
        if decrease <= 0.0 {
            continue;
        }
        importance[split.feature] += idx.len() as f64 / n_boot as f64 * decrease;
        let (left, right): (Vec<usize>, Vec<usize>) =
            idx.into_iter().partition(|&i| ds.features[[i, split.feature]] <= split.threshold);
        stack.push((right, depth + 1));
        stack.push((left, depth + 1));
    }
    importance
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    /// label = 1{x0 > 0}, remaining columns independent noise.
    fn planted(n: usize, d: usize, seed: u64) -> LabeledDataset {
        let mut r = rng::stream(seed);
        let mut f = Array2::zeros((n, d));
        rng::fill_normal(&mut r, f.as_slice_mut().unwrap());
        let labels = (0..n).map(|i| u8::from(f[[i, 0]] > 0.0)).collect();
        let names = (0..d).map(|i| format!("f{i}")).collect();
        LabeledDataset::new(f, labels, names).unwrap()
    }

    fn small_cfg(d: usize) -> ForestConfig {
        ForestConfig { n_trees: 20, ..ForestConfig::for_features(d) }
    }

    #[test]
    fn planted_feature_ranks_first() {
        let ds = planted(600, 10, 5);
        let rep = fit_random_forest_importance(&ds, &small_cfg(10)).unwrap();
        assert_eq!(rep.ranking[0], 0);
        assert!(rep.importances.iter().all(|&v| v >= 0.0));
        assert!((rep.importances.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_feature_gets_everything() {
        let ds = planted(100, 1, 2);
        let rep = fit_random_forest_importance(&ds, &small_cfg(1)).unwrap();
        assert_eq!(rep.importances, vec![1.0]);
    }

    #[test]
    fn deterministic_and_schedule_independent() {
        let ds = planted(300, 6, 8);
        let cfg = small_cfg(6);
        let a = fit_random_forest_importance_with(&ds, &cfg, Exec::Sequential).unwrap();
        let b = fit_random_forest_importance_with(&ds, &cfg, Exec::Parallel).unwrap();
        let c = fit_random_forest_importance_with(&ds, &cfg, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(b, c);
    }

    #[test]
    fn permuting_columns_keeps_top_feature() {
        let ds = planted(600, 8, 21);
        let perm = [3, 7, 0, 1, 6, 2, 5, 4];
        let permuted = ds.select_columns(&perm);
        let rep = fit_random_forest_importance(&permuted, &small_cfg(8)).unwrap();
        assert_eq!(perm[rep.ranking[0]], 0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut ds = planted(50, 3, 1);
        let cfg = small_cfg(3);
        assert!(matches!(
            fit_random_forest_importance(&ds, &ForestConfig { n_trees: 0, ..cfg.clone() }),
            Err(Error::Config(_))
        ));
        ds.labels.iter_mut().for_each(|l| *l = 0);
        assert!(matches!(fit_random_forest_importance(&ds, &cfg), Err(Error::Insufficient(_))));
    }

    #[test]
    fn top_k_selection() {
        let rep = ImportanceReport::from_importances(vec![0.5, 0.3, 0.2]);
        assert_eq!(select_top_k(&rep, 2).unwrap().selected_indices, vec![0, 1]);
        assert_eq!(select_top_k(&rep, 3).unwrap().selected_indices, vec![0, 1, 2]);
        let tie = ImportanceReport::from_importances(vec![0.4, 0.4, 0.2]);
        assert_eq!(select_top_k(&tie, 1).unwrap().selected_indices, vec![0]);
        let rev = ImportanceReport::from_importances(vec![0.2, 0.3, 0.5]);
        assert_eq!(select_top_k(&rev, 3).unwrap().selected_indices, vec![2, 1, 0]);
        assert!(matches!(select_top_k(&rep, 4), Err(Error::Config(_))));
    }
}
