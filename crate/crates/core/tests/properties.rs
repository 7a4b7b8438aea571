use dspace::fewshot::{
    combined_distances, compute_prototypes, cosine_distances, dual_space_distances, estimate, normalized_euclidean,
    plain_euclidean, sample_episode, DualSpaceConfig, Prototypes,
};
use dspace::preprocess::{apply_robust_scaler, fit_robust_scaler, quantile};
use dspace::synth::{gen_gaussian_blobs, BlobSpec};
use dspace::LabeledDataset;
use ndarray::Array2;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    proptest::collection::vec(-10.0f64..10.0, rows * cols)
        .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

/// (queries, prototypes) with 1..6 queries, 2 or 3 classes, width 1..=16.
fn instance() -> impl Strategy<Value = (Array2<f64>, Prototypes)> {
    (1usize..6, 2usize..4, 1usize..17).prop_flat_map(|(q, c, d)| {
        (matrix(q, d), matrix(c, d))
            .prop_map(move |(queries, vectors)| (queries, Prototypes { vectors, class_ids: (0..c).collect() }))
    })
}

fn argmin(row: ndarray::ArrayView1<f64>) -> usize {
    row.iter().enumerate().fold(0, |b, (j, &v)| if v < row[b] { j } else { b })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn normalized_rows_sum_to_one((q, p) in instance()) {
        let raw = plain_euclidean(&q, &p).unwrap().values;
        let d = normalized_euclidean(&q, &p, 1e-12).unwrap();
        for (row, raw_row) in d.values.outer_iter().zip(raw.outer_iter()) {
            prop_assume!(raw_row.sum() > 1e-2);
            prop_assert!((row.sum() - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
        }
    }

    #[test]
    fn cosine_distance_is_bounded((q, p) in instance()) {
        let d = cosine_distances(&q, &p, 1e-12).unwrap();
        prop_assert!(d.values.iter().all(|&v| (-1e-9..=2.0 + 1e-9).contains(&v)));
    }

    #[test]
    fn alpha_endpoints_are_exact((q, p) in instance()) {
        let de = normalized_euclidean(&q, &p, 1e-12).unwrap();
        let dc = cosine_distances(&q, &p, 1e-12).unwrap();
        let at = |alpha| combined_distances(&de, &dc, &DualSpaceConfig { alpha, ..Default::default() }).unwrap().values;
        prop_assert_eq!(at(1.0), de.values.clone());
        prop_assert_eq!(at(0.0), dc.values.clone());
        let half = at(0.5);
        for ((h, e), c) in half.iter().zip(&de.values).zip(&dc.values) {
            prop_assert!((h - 0.5 * (e + c)).abs() < 1e-15);
        }
    }

    #[test]
    fn normalization_preserves_nearest_prototype((q, p) in instance()) {
        let plain = plain_euclidean(&q, &p).unwrap().values;
        let norm = normalized_euclidean(&q, &p, 1e-12).unwrap().values;
        for (a, b) in plain.outer_iter().zip(norm.outer_iter()) {
            prop_assert_eq!(argmin(a), argmin(b));
        }
    }

    #[test]
    fn estimate_is_rowwise_argmin((q, p) in instance(), alpha in 0.0f64..=1.0) {
        let cfg = DualSpaceConfig { alpha, ..Default::default() };
        let d = dual_space_distances(&q, &p, &cfg).unwrap().values;
        let est = estimate(&q, &p, &cfg).unwrap();
        for (row, e) in d.outer_iter().zip(est) {
            prop_assert_eq!(argmin(row), e);
        }
    }

    #[test]
    fn prototypes_are_translation_equivariant(x in matrix(8, 3), shift in proptest::collection::vec(-5.0f64..5.0, 3)) {
        let labels = [0, 1, 0, 1, 1, 0, 0, 1];
        let base = compute_prototypes(&x, &labels, 2).unwrap();
        let s = ndarray::Array1::from(shift);
        let moved = compute_prototypes(&(&x + &s), &labels, 2).unwrap();
        for (a, b) in moved.vectors.iter().zip((&base.vectors + &s).iter()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn quantile_is_monotone(mut v in proptest::collection::vec(-1e6f64..1e6, 1..50), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(quantile(&v, lo).unwrap() <= quantile(&v, hi).unwrap());
        v.sort_by(f64::total_cmp);
        prop_assert_eq!(quantile(&v, 0.0).unwrap(), v[0]);
        prop_assert_eq!(quantile(&v, 1.0).unwrap(), v[v.len() - 1]);
    }

    #[test]
    fn scaler_is_affine_per_column(col in proptest::collection::vec(-100.0f64..100.0, 4..40), a in 0.5f64..4.0, b in -50.0f64..50.0) {
        let n = col.len();
        let mut f = Array2::zeros((n, 2));
        for (i, &v) in col.iter().enumerate() {
            f[[i, 0]] = v;
            f[[i, 1]] = a * v + b;
        }
        let ds = LabeledDataset::new(f, (0..n).map(|i| (i % 2) as u8).collect(), vec!["x".into(), "y".into()]).unwrap();
        let p = fit_robust_scaler(&ds).unwrap();
        prop_assume!(quantile(&col, 0.75).unwrap() > quantile(&col, 0.25).unwrap());
        let out = apply_robust_scaler(&ds, &p).unwrap();
        for i in 0..n {
            prop_assert!((out.features[[i, 0]] - out.features[[i, 1]]).abs() < 1e-9 * (1.0 + out.features[[i, 0]].abs()));
        }
    }

    #[test]
    fn episodes_are_disjoint_and_balanced(seed in any::<u64>(), ks in 1usize..6, kq in 1usize..10) {
        let ds = gen_gaussian_blobs(&BlobSpec { dim: 3, n_per_class: 20, seed: 1, ..Default::default() }).unwrap();
        let ep = sample_episode(&ds, ks, kq, seed).unwrap();
        prop_assert_eq!(ep.support_y.iter().filter(|&&y| y == 1).count(), ks);
        prop_assert_eq!(ep.query_y.iter().filter(|&&y| y == 0).count(), kq);
        for r in &ep.support_rows {
            prop_assert!(!ep.query_rows.contains(r));
        }
    }
}
