use proptest::prelude::*;
use thermomark::clustering::{
    adjusted_rand_index, cut_tree, explained_variance, explained_variance_curve, select_k_elbow, silhouette_score,
    ward_linkage,
};
use thermomark_oracles::{silhouette, ward_exhaustive, ward_first_merge};

fn points(n: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (n, 1usize..=4).prop_flat_map(|(n, d)| prop::collection::vec(prop::collection::vec(-10.0f64..10.0, d), n))
}

fn partition(labels: &[usize]) -> Vec<Vec<usize>> {
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    out.sort();
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn silhouette_matches_direct_definition(
        (f, labels) in points(3..=50).prop_flat_map(|f| {
            let n = f.len();
            (Just(f), prop::collection::vec(1usize..=4, n))
        })
    ) {
        prop_assume!(labels.iter().any(|&l| l != labels[0]));
        let got = silhouette_score(&f, &labels).unwrap();
        let want = silhouette(&f, &labels);
        prop_assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
    }

    #[test]
    fn ward_matches_exhaustive_agglomeration(f in points(2..=8)) {
        let tree = ward_linkage(&f).unwrap();
        let (i, j, cost) = ward_first_merge(&f);
        let m = tree.merges[0];
        prop_assert_eq!((m.a, m.b), (i, j));
        prop_assert!((m.height - (2.0 * cost).sqrt()).abs() <= 1e-9 * (1.0 + m.height));
        let history = ward_exhaustive(&f);
        let n = f.len();
        let two = &history[n - 2];
        prop_assert_eq!(&partition(&cut_tree(&tree, 2).unwrap()), two);
        for k in 1..=n {
            prop_assert_eq!(&partition(&cut_tree(&tree, k).unwrap()), &history[n - k]);
        }
    }

    #[test]
    fn explained_variance_endpoints(f in points(2..=30)) {
        let tree = ward_linkage(&f).unwrap();
        let n = f.len();
        let curve = explained_variance_curve(&f, &tree, n).unwrap();
        prop_assert_eq!(curve[0].1, 0.0);
        prop_assert_eq!(curve[n - 1].1, 1.0);
        for w in curve.windows(2) {
            prop_assert!(w[1].1 >= w[0].1);
        }
    }

    #[test]
    fn ari_is_label_invariant(labels in prop::collection::vec(1usize..=3, 2..40)) {
        let renamed: Vec<usize> = labels.iter().map(|&l| 10 - l).collect();
        prop_assert!((adjusted_rand_index(&labels, &renamed) - 1.0).abs() < 1e-12);
    }
}

#[test]
fn two_blobs_give_elbow_two() {
    let mut f = Vec::new();
    for i in 0..30 {
        let t = i as f64 * 0.37;
        f.push(vec![t.sin() * 0.3, t.cos() * 0.3]);
        f.push(vec![8.0 + t.cos() * 0.3, 8.0 + t.sin() * 0.3]);
    }
    let tree = ward_linkage(&f).unwrap();
    let curve = explained_variance_curve(&f, &tree, 10).unwrap();
    assert_eq!(select_k_elbow(&curve).unwrap(), 2);
    let labels = cut_tree(&tree, 2).unwrap();
    assert!(explained_variance(&f, &labels) > 0.99);
    assert!(silhouette_score(&f, &labels).unwrap() > 0.9);
}
