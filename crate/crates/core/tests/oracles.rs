//! Independent reference implementations checked against the library.

use dspace::preprocess::{fit_random_forest_importance, ForestConfig};
use dspace::rng;
use dspace::LabeledDataset;
use ndarray::Array2;

/// Exact split score `(l0²+l1²)/nl + (r0²+r1²)/nr` as a fraction; a larger
/// score means a lower weighted child Gini impurity.
#[derive(Clone, Copy)]
struct Score {
    num: u128,
    den: u128,
}

impl Score {
    fn gt(self, o: Score) -> bool {
        self.num * o.den > o.num * self.den
    }

    fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// A single CART tree on all rows, every feature examined at every node,
/// splits compared in exact integer arithmetic. Ties keep the lowest feature
/// index and then the lowest threshold.
fn brute_force_mdi(x: &Array2<f64>, y: &[u8], max_depth: usize, min_leaf: usize) -> Vec<f64> {
    let (n, d) = x.dim();
    let mut imp = vec![0.0; d];
    let mut stack = vec![((0..n).collect::<Vec<_>>(), 0usize)];
    while let Some((rows, depth)) = stack.pop() {
        let m = rows.len() as u128;
        let n1 = rows.iter().filter(|&&i| y[i] == 1).count() as u128;
        let n0 = m - n1;
        if depth >= max_depth || rows.len() < 2 * min_leaf || n0 == 0 || n1 == 0 {
            continue;
        }
        let parent = Score { num: n0 * n0 + n1 * n1, den: m };
        let mut best: Option<(Score, usize, f64)> = None;
        for f in 0..d {
            let mut vals: Vec<f64> = rows.iter().map(|&i| x[[i, f]]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let thr = 0.5 * (w[0] + w[1]);
                let (mut l0, mut l1, mut r0, mut r1) = (0u128, 0u128, 0u128, 0u128);
                for &i in &rows {
                    match (x[[i, f]] <= thr, y[i]) {
                        (true, 0) => l0 += 1,
                        (true, _) => l1 += 1,
                        (false, 0) => r0 += 1,
                        (false, _) => r1 += 1,
                    }
                }
                let (nl, nr) = (l0 + l1, r0 + r1);
                if nl < min_leaf as u128 || nr < min_leaf as u128 {
                    continue;
                }
                let s = Score { num: (l0 * l0 + l1 * l1) * nr + (r0 * r0 + r1 * r1) * nl, den: nl * nr };
                if best.is_none_or(|(b, _, _)| s.gt(b)) {
                    best = Some((s, f, thr));
                }
            }
        }
        let Some((s, f, thr)) = best else { continue };
        if !s.gt(parent) {
            continue;
        }
        imp[f] += (m as f64 / n as f64) * (s.value() - parent.value()) / m as f64;
        let (left, right): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&i| x[[i, f]] <= thr);
        stack.push((right, depth + 1));
        stack.push((left, depth + 1));
    }
    let total: f64 = imp.iter().sum();
    imp.iter().map(|v| v / total).collect()
}

fn noisy_linear(n: usize, d: usize, seed: u64, quantize: bool) -> LabeledDataset {
    let mut r = rng::stream(seed);
    let mut f = Array2::zeros((n, d));
    rng::fill_normal(&mut r, f.as_slice_mut().unwrap());
    if quantize {
        f.mapv_inplace(|v| (2.0 * v).round());
    }
    let mut noise = vec![0.0; n];
    rng::fill_normal(&mut r, &mut noise);
    let labels = (0..n).map(|i| u8::from(f[[i, 0]] + 0.7 * f[[i, 1]] + 0.5 * noise[i] > 0.0)).collect();
    LabeledDataset::new(f, labels, (0..d).map(|i| format!("x{i}")).collect()).unwrap()
}

fn exhaustive(d: usize, n_trees: usize) -> ForestConfig {
    ForestConfig {
        n_trees,
        max_depth: 4,
        features_per_split: d,
        min_samples_leaf: 3,
        seed: 0,
        max_samples: None,
        bootstrap: false,
    }
}

#[test]
fn unbagged_tree_matches_brute_force_gini() {
    for (seed, quantize) in [(1, false), (2, false), (3, true), (4, true)] {
        let ds = noisy_linear(160, 5, seed, quantize);
        let oracle = brute_force_mdi(&ds.features, &ds.labels, 4, 3);
        let got = fit_random_forest_importance(&ds, &exhaustive(5, 1)).unwrap();
        for (g, o) in got.importances.iter().zip(&oracle) {
            assert!((g - o).abs() < 1e-12, "seed {seed}: {:?} vs {oracle:?}", got.importances);
        }
    }
}

#[test]
fn identical_trees_average_to_one_tree() {
    let ds = noisy_linear(120, 4, 9, false);
    let one = fit_random_forest_importance(&ds, &exhaustive(4, 1)).unwrap();
    let many = fit_random_forest_importance(&ds, &exhaustive(4, 7)).unwrap();
    for (a, b) in one.importances.iter().zip(&many.importances) {
        assert!((a - b).abs() < 1e-12);
    }
}

/// Importances of a 100-tree scikit-learn forest (depth 12, 4 features per
/// split, leaves of 5) fitted once on exactly this dataset.
const REFERENCE_TOP3: [(usize, f64); 3] = [(0, 0.6496), (1, 0.2147), (2, 0.0643)];

#[test]
fn default_forest_agrees_with_reference_ensemble() {
    let (n, d) = (2000, 10);
    let mut r = rng::stream(5);
    let mut f = Array2::zeros((n, d));
    rng::fill_normal(&mut r, f.as_slice_mut().unwrap());
    let labels = (0..n).map(|i| u8::from(f[[i, 0]] + 0.5 * f[[i, 1]] + 0.25 * f[[i, 2]] > 0.0)).collect();
    let ds = LabeledDataset::new(f, labels, (0..d).map(|i| format!("f{i}")).collect()).unwrap();
    let rep = fit_random_forest_importance(&ds, &ForestConfig::for_features(d)).unwrap();
    for (rank, (feature, reference)) in REFERENCE_TOP3.into_iter().enumerate() {
        assert_eq!(rep.ranking[rank], feature);
        assert!((rep.importances[feature] - reference).abs() < 0.03, "{:?}", rep.importances);
    }
}
