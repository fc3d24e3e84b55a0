use std::collections::BTreeSet;

use proptest::prelude::*;

use vibe_core::clustering::{cluster, kmeans, ClusteringConfig, Points};
use vibe_core::dataset::aggregate_embedding;
use vibe_core::hypothesis::{auroc, split_extremes};
use vibe_core::search::{cosine_similarity, top_k};
use vibe_core::stats::{bootstrap_mean_ci, histogram, significance};
use vibe_core::subgroup::{extremes, neighbor_clusters, rank_subgroups, representatives};
use vibe_core::{Dataset, EmbeddingStore, MetricDescriptor, MetricDirection, SampleRecord, Subgroup};

fn nonzero_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, dim).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

fn dataset_strategy() -> impl Strategy<Value = Dataset> {
    (3usize..40, 2usize..6).prop_flat_map(|(n, d)| {
        (
            prop::collection::vec(nonzero_vec(d), n),
            prop::collection::vec(-5.0f64..5.0, n),
        )
            .prop_map(|(rows, metric)| {
                let records = metric
                    .iter()
                    .enumerate()
                    .map(|(i, m)| SampleRecord::new(format!("s{i:03}"), "a.png").with_metric("m", *m))
                    .collect();
                Dataset::new(
                    "p",
                    ".",
                    vec![MetricDescriptor::new("m", MetricDirection::LowerIsBetter)],
                    records,
                    EmbeddingStore::from_rows(&rows).unwrap(),
                )
                .unwrap()
            })
    })
}

fn subset(ds: &Dataset, mask: &[bool]) -> Subgroup {
    let ids: Vec<String> = ds.ids().zip(mask.iter().cycle()).filter(|(_, m)| **m).map(|(id, _)| id.to_string()).collect();
    Subgroup::custom(ids, "mask")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cosine_symmetric_and_scale_invariant(a in nonzero_vec(5), b in nonzero_vec(5), s in 0.01f64..100.0, t in 0.01f64..100.0) {
        let ab = cosine_similarity(&a, &b).unwrap();
        prop_assert_eq!(ab, cosine_similarity(&b, &a).unwrap());
        let sa: Vec<f64> = a.iter().map(|x| x * s).collect();
        let tb: Vec<f64> = b.iter().map(|x| x * t).collect();
        prop_assert!((cosine_similarity(&sa, &tb).unwrap() - ab).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn top_k_permutation_and_prefix(ds in dataset_strategy(), q in nonzero_vec(5)) {
        let q = &q[..ds.dim()];
        prop_assume!(q.iter().any(|x| x.abs() > 1e-3));
        let all = top_k(&ds, q, ds.len(), None).unwrap();
        let ids: BTreeSet<&str> = all.iter().map(|h| h.sample_id.as_str()).collect();
        prop_assert_eq!(ids.len(), ds.len());
        for k in 0..ds.len() {
            let a = top_k(&ds, q, k, None).unwrap();
            let b = top_k(&ds, q, k + 1, None).unwrap();
            prop_assert_eq!(&a[..], &b[..k]);
        }
    }

    #[test]
    fn kmeans_partitions_and_inertia_decreases(ds in dataset_strategy(), k in 1usize..6, seed in any::<u64>()) {
        let k = k.min(ds.len());
        let rows: Vec<Vec<f64>> = ds.store().rows().map(<[f64]>::to_vec).collect();
        let r = kmeans(&Points::from_rows(&rows), k, seed, 100, 0.0).unwrap();
        for w in r.inertia_history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
        }
        let groups = cluster(&ds, &ClusteringConfig::kmeans(k).with_seed(seed), None).unwrap();
        prop_assert_eq!(groups.len(), k);
        let mut seen = BTreeSet::new();
        for g in &groups {
            prop_assert!(!g.members.is_empty());
            for m in &g.members {
                prop_assert!(seen.insert(m.clone()), "duplicate member");
            }
        }
        prop_assert_eq!(seen.len(), ds.len());
        let again = cluster(&ds, &ClusteringConfig::kmeans(k).with_seed(seed), None).unwrap();
        prop_assert_eq!(groups, again);
    }

    #[test]
    fn subset_relations(ds in dataset_strategy(), mask in prop::collection::vec(any::<bool>(), 1..10), n in 1usize..8) {
        let sg = subset(&ds, &mask);
        prop_assume!(sg.len() >= 2);
        let members: BTreeSet<&String> = sg.members.iter().collect();
        let reps = representatives(&sg, &ds, n, 0.0).unwrap();
        prop_assert!(reps.iter().all(|r| members.contains(r)));
        let longer = representatives(&sg, &ds, n + 1, 0.0).unwrap();
        prop_assert_eq!(&longer[..reps.len()], &reps[..]);
        let (worst, best) = extremes(&sg, &ds, "m", n).unwrap();
        prop_assert!(worst.iter().chain(&best).all(|r| members.contains(r)));
        if 2 * n <= sg.len() {
            prop_assert!(worst.iter().all(|w| !best.contains(w)));
        }
        let split = split_extremes(&sg, &ds, "m", n).unwrap();
        let m = n.min(sg.len() / 2);
        prop_assert_eq!(split.group_a.len(), m);
        prop_assert_eq!(split.group_b.len(), m);
        prop_assert!(split.group_a.iter().all(|a| !split.group_b.contains(a)));
    }

    #[test]
    fn neighbors_exclude_target(ds in dataset_strategy(), k in 1usize..5) {
        let k = k.min(ds.len());
        let groups = cluster(&ds, &ClusteringConfig::kmeans(k), None).unwrap();
        let n = neighbor_clusters(&groups[0], &groups, &ds, 10).unwrap();
        prop_assert!(n.iter().all(|c| c.subgroup_id != groups[0].id));
        prop_assert_eq!(n.len(), groups.len() - 1);
    }

    #[test]
    fn rank_is_invariant_under_affine_transform(ds in dataset_strategy(), masks in prop::collection::vec(prop::collection::vec(any::<bool>(), 1..6), 2..6)) {
        let groups: Vec<Subgroup> = masks.iter().map(|m| subset(&ds, m)).collect();
        let before: Vec<String> = rank_subgroups(&groups, &ds, "m").unwrap().into_iter().map(|r| r.id).collect();
        // Mean order survives increasing affine maps; a general monotone map can reorder means.
        let records: Vec<SampleRecord> = ds.records().iter().map(|r| {
            let mut r = r.clone();
            let v = r.metrics["m"];
            r.metrics.insert("m".into(), 3.0 * v + 7.0);
            r
        }).collect();
        let shifted = Dataset::new("p", ".", ds.manifest().metric_descriptors.clone(), records, ds.store().clone()).unwrap();
        let after: Vec<String> = rank_subgroups(&groups, &shifted, "m").unwrap().into_iter().map(|r| r.id).collect();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn auroc_rank_based(pos in prop::collection::vec(-3.0f64..3.0, 1..30), neg in prop::collection::vec(-3.0f64..3.0, 1..30)) {
        let a = auroc(&pos, &neg).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        let f = |v: &Vec<f64>| -> Vec<f64> { v.iter().map(|x| x.powi(3) + 2.0 * x).collect() };
        prop_assert_eq!(a, auroc(&f(&pos), &f(&neg)).unwrap());
        prop_assert!((auroc(&neg, &pos).unwrap() - (1.0 - a)).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_contains_mean(values in prop::collection::vec(-100.0f64..100.0, 1..60), resamples in 1usize..50, seed in any::<u64>()) {
        let e = bootstrap_mean_ci(&values, resamples, 0.05, seed).unwrap();
        prop_assert!(e.lo <= e.mean && e.mean <= e.hi);
    }

    #[test]
    fn histogram_permutation_invariant(mut values in prop::collection::vec(-2.0f64..2.0, 0..80), bins in 1usize..12) {
        let h = histogram(&values, bins, [-1.0, 1.0]).unwrap();
        values.reverse();
        let third = values.len() / 3;
        values.rotate_left(third);
        prop_assert_eq!(h, histogram(&values, bins, [-1.0, 1.0]).unwrap());
    }

    #[test]
    fn significance_symmetric(a in prop::collection::vec(0.0f64..1.0, 2..30), b in prop::collection::vec(0.0f64..1.0, 2..30)) {
        let x = bootstrap_mean_ci(&a, 200, 0.05, 1).unwrap();
        let y = bootstrap_mean_ci(&b, 200, 0.05, 1).unwrap();
        prop_assert_eq!(significance(&x, &y).unwrap().verdict, significance(&y, &x).unwrap().verdict);
    }

    #[test]
    fn aggregate_permutation_invariant(vs in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 4), 1..20)) {
        let a = aggregate_embedding(&vs).unwrap();
        let mut rev = vs.clone();
        rev.reverse();
        let b = aggregate_embedding(&rev).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
        }
    }
}
