mod common;

use std::collections::BTreeSet;

use approx::assert_abs_diff_eq;
use ndarray::{Array1, Array2, Axis};
use proptest::prelude::*;

use rudx::data::{
    resample_linear_decay, sample_minibatch, sampler_rng, source_share, subset_partial, DomainDataset,
};
use rudx::eval::{cluster_accuracy, MetricsReport};
use rudx::losses::{
    auxiliary_dist, clustering_loss, dissimilarity_loss, encoder_loss, discriminator_loss, soft_assign,
    CentroidPredictionMatrix, SoftAssignment,
};

fn matrix(rows: usize, cols: usize, range: std::ops::Range<f64>) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(range, rows * cols).prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

/// Features and centroids of matching width.
fn clustering_instance() -> impl Strategy<Value = (Array2<f64>, Array2<f64>, f64)> {
    (1usize..8, 2usize..6, 1usize..5).prop_flat_map(|(n, k, f)| {
        (matrix(n, f, -4.0..4.0), matrix(k, f, -4.0..4.0), 0.2f64..3.0)
    })
}

fn labeled(counts: &[usize], k: usize) -> DomainDataset {
    let n: usize = counts.iter().sum();
    let mut labels = Vec::with_capacity(n);
    for (c, &m) in counts.iter().enumerate() {
        labels.extend(std::iter::repeat_n(c, m));
    }
    let x = Array2::from_shape_fn((n, 3), |(i, j)| (i * 3 + j) as f32);
    DomainDataset::new("d", x, vec![3], Some(labels), k).unwrap()
}

fn entropy(row: ndarray::ArrayView1<f64>) -> f64 {
    -row.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn soft_assign_rows_are_distributions((z, mu, alpha) in clustering_instance()) {
        let q = soft_assign(&z, &mu, alpha).unwrap();
        for row in q.q.outer_iter() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn soft_assign_follows_centroid_permutation(
        (z, mu, alpha) in clustering_instance(),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let mut perm: Vec<usize> = (0..mu.nrows()).collect();
        perm.shuffle(&mut sampler_rng(seed));
        let q = soft_assign(&z, &mu, alpha).unwrap();
        let qp = soft_assign(&z, &mu.select(Axis(0), &perm), alpha).unwrap();
        let expected = q.q.select(Axis(1), &perm);
        for (a, b) in qp.q.iter().zip(expected.iter()) {
            prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn dissimilarity_ignores_column_order(a in (2usize..6, 2usize..6).prop_flat_map(|(k, c)| matrix(k, c, 0.0..1.0)), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut perm: Vec<usize> = (0..a.ncols()).collect();
        perm.shuffle(&mut sampler_rng(seed));
        let base = dissimilarity_loss(&CentroidPredictionMatrix { a: a.clone() });
        let moved = dissimilarity_loss(&CentroidPredictionMatrix { a: a.select(Axis(1), &perm) });
        prop_assert!((base - moved).abs() <= 1e-12 * base.max(1.0));
    }

    #[test]
    fn dissimilarity_vanishes_exactly_for_disjoint_supports(
        a in (2usize..6, 2usize..6).prop_flat_map(|(k, c)| matrix(k, c, 0.0..1.0)),
        mask in prop::collection::vec(any::<bool>(), 36),
    ) {
        // sparsify so that disjoint and overlapping supports both occur
        let (k, c) = a.dim();
        let a = Array2::from_shape_fn((k, c), |(i, j)| if mask[i * 6 + j] { a[[i, j]] } else { 0.0 });
        let gram = a.t().dot(&a);
        let disjoint = (0..c).all(|x| (0..c).all(|y| x == y || gram[[x, y]] == 0.0));
        let loss = dissimilarity_loss(&CentroidPredictionMatrix { a });
        prop_assert_eq!(loss == 0.0, disjoint);
    }

    #[test]
    fn equal_frequencies_sharpen_rows(rows in (1usize..6, 2usize..5).prop_flat_map(|(n, k)| matrix(n, k, 0.05..1.0))) {
        // a block and its cyclic shifts give every column the same mass
        let (n, k) = rows.dim();
        let mut q = Array2::zeros((n * k, k));
        for s in 0..k {
            for i in 0..n {
                let total = rows.row(i).sum();
                for c in 0..k {
                    q[[s * n + i, (c + s) % k]] = rows[[i, c]] / total;
                }
            }
        }
        let q = SoftAssignment { q, alpha: 1.0 };
        let p = auxiliary_dist(&q).unwrap();
        for &fc in p.f.iter() {
            assert_abs_diff_eq!(fc, p.f[0], epsilon = 1e-12);
        }
        for (pi, qi) in p.p.outer_iter().zip(q.q.outer_iter()) {
            let sq = qi.mapv(|v| v * v);
            let expected = &sq / sq.sum();
            for (a, b) in pi.iter().zip(expected.iter()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            prop_assert!(entropy(pi) <= entropy(qi) + 1e-12);
        }
    }

    #[test]
    fn clustering_loss_is_a_divergence((z, mu, alpha) in clustering_instance()) {
        let q = soft_assign(&z, &mu, alpha).unwrap();
        let p = auxiliary_dist(&q).unwrap();
        let loss = clustering_loss(&p, &q).unwrap();
        prop_assert!(loss >= -1e-12 && loss.is_finite());
        let same = rudx::losses::AuxiliaryDistribution { p: q.q.clone(), f: p.f.clone() };
        prop_assert!(clustering_loss(&same, &q).unwrap().abs() < 1e-12);
    }

    #[test]
    fn adversarial_losses_stay_finite_at_the_edges(
        ds in prop::collection::vec(prop_oneof![Just(0.0), Just(1.0), 0.0f64..=1.0], 1..8),
        dt in prop::collection::vec(prop_oneof![Just(0.0), Just(1.0), 0.0f64..=1.0], 1..8),
    ) {
        let ds = Array1::from(ds);
        let dt = Array1::from(dt);
        let floor = 1e-8f64.ln();
        let ld = discriminator_loss(ds.view(), dt.view());
        let le = encoder_loss(dt.view());
        prop_assert!(ld.is_finite() && ld >= 2.0 * floor - 1e-6);
        prop_assert!(le.is_finite() && le >= floor - 1e-6);
    }

    #[test]
    fn minibatch_mixes_the_rounded_share(m in 1usize..=256, mix in prop::sample::select(vec![0.0, 0.25, 0.5, 1.0]), seed in any::<u64>()) {
        let target = labeled(&[4, 3], 2).unlabeled();
        let source = labeled(&[5, 5], 2);
        let batch = sample_minibatch(&target, &source, m, mix, &mut sampler_rng(seed)).unwrap();
        let expected = (m as f64 * mix + 0.5).floor() as usize;
        prop_assert_eq!(batch.len(), m);
        prop_assert_eq!(batch.origin_mask.iter().filter(|&&s| s).count(), expected);
        prop_assert_eq!(source_share(m, mix), expected);
    }

    #[test]
    fn samplers_are_pure_functions_of_their_seed(m in 1usize..64, seed in any::<u64>()) {
        let target = labeled(&[6, 2, 3], 3).unlabeled();
        let source = labeled(&[4, 4, 4], 3);
        let a = sample_minibatch(&target, &source, m, 0.5, &mut sampler_rng(seed)).unwrap();
        let b = sample_minibatch(&target, &source, m, 0.5, &mut sampler_rng(seed)).unwrap();
        prop_assert_eq!(a, b);
        let x = resample_linear_decay(&source, 1.0, 0.3, seed).unwrap();
        let y = resample_linear_decay(&source, 1.0, 0.3, seed).unwrap();
        prop_assert_eq!(x.instances(), y.instances());
        prop_assert_eq!(x.labels(), y.labels());
    }

    #[test]
    fn linear_decay_returns_a_labeled_subset(
        counts in prop::collection::vec(0usize..30, 2..6),
        end in 0.05f64..=1.0,
        seed in any::<u64>(),
    ) {
        let ds = labeled(&counts, counts.len());
        let out = resample_linear_decay(&ds, 1.0, end, seed).unwrap();
        let originals: Vec<(Vec<u32>, usize)> = (0..ds.len())
            .map(|i| (ds.instance(i).iter().map(|v| v.to_bits()).collect(), ds.labels().unwrap()[i]))
            .collect();
        for i in 0..out.len() {
            let row: Vec<u32> = out.instance(i).iter().map(|v| v.to_bits()).collect();
            prop_assert!(originals.contains(&(row, out.labels().unwrap()[i])));
        }
    }

    #[test]
    fn partial_subset_drops_excluded_classes(
        counts in prop::collection::vec(0usize..10, 2..8),
        keep in prop::collection::btree_set(0usize..8, 1..8),
    ) {
        let k = counts.len();
        let keep: BTreeSet<usize> = keep.into_iter().filter(|&c| c < k).collect();
        prop_assume!(!keep.is_empty());
        let out = subset_partial(&labeled(&counts, k), &keep).unwrap();
        let seen = out.class_counts().unwrap();
        for c in 0..k {
            let expected = if keep.contains(&c) { counts[c] } else { 0 };
            prop_assert_eq!(seen[c], expected);
        }
    }

    #[test]
    fn cluster_accuracy_is_the_best_relabeling(
        (assign, labels) in (2usize..=5, 1usize..40).prop_flat_map(|(k, n)| {
            (prop::collection::vec(0..k, n), prop::collection::vec(0..k, n))
        }),
    ) {
        let got = cluster_accuracy(&assign, &labels).unwrap();
        prop_assert_eq!(got, common::brute_force_cluster_accuracy(&assign, &labels));
    }

    #[test]
    fn overall_accuracy_is_the_frequency_weighted_class_mean(
        (labels, preds) in (2usize..6, 1usize..50).prop_flat_map(|(k, n)| {
            (prop::collection::vec(0..k, n), prop::collection::vec(0..k, n))
        }),
    ) {
        let k = 6;
        let r = MetricsReport::from_predictions(&labels, &preds, k, &preds).unwrap();
        let mut weighted = 0.0;
        for (c, acc) in r.per_class_acc.iter().enumerate() {
            let n_c = labels.iter().filter(|&&l| l == c).count();
            match acc {
                Some(a) => {
                    prop_assert!((0.0..=1.0).contains(a));
                    weighted += a * n_c as f64;
                }
                None => prop_assert_eq!(n_c, 0),
            }
        }
        prop_assert!((weighted / labels.len() as f64 - r.overall_acc).abs() < 1e-12);
    }
}
