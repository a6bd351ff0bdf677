use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use tabinsight::feature_profile::{
    cluster_feature, gower_distance_matrix, hdbscan_cluster, ClusterConfig, ClusterOutcome, DistanceMatrix,
    CLUSTER_FEATURE,
};
use tabinsight::table_ingest::{Feature, FeatureTable};

#[derive(Deserialize)]
struct Fixture {
    cases: Vec<Case>,
}

#[derive(Deserialize)]
struct Case {
    name: String,
    points: Vec<[f64; 2]>,
    min_cluster_size: usize,
    min_samples: usize,
    labels: Vec<i64>,
}

/// Renames cluster ids in order of first appearance; noise stays `None`.
fn canonical(labels: impl IntoIterator<Item = Option<usize>>) -> Vec<Option<usize>> {
    let mut seen: Vec<usize> = Vec::new();
    labels
        .into_iter()
        .map(|l| {
            l.map(|c| match seen.iter().position(|&s| s == c) {
                Some(i) => i,
                None => {
                    seen.push(c);
                    seen.len() - 1
                }
            })
        })
        .collect()
}

fn euclidean(points: &[[f64; 2]]) -> DistanceMatrix {
    DistanceMatrix::from_fn(points.len(), |i, j| {
        ((points[i][0] - points[j][0]).powi(2) + (points[i][1] - points[j][1]).powi(2)).sqrt()
    })
}

#[test]
fn labels_match_frozen_reference_implementation() {
    let fixture: Fixture = serde_json::from_str(include_str!("fixtures/hdbscan_sklearn.json")).unwrap();
    assert_eq!(fixture.cases.len(), 5);
    for case in fixture.cases {
        let cfg = ClusterConfig {
            min_cluster_size: case.min_cluster_size,
            min_samples: case.min_samples,
            ..ClusterConfig::default()
        };
        let ours = hdbscan_cluster(&euclidean(&case.points), &cfg).unwrap();
        let reference = case.labels.iter().map(|&l| (l >= 0).then_some(l as usize));
        assert_eq!(canonical(ours), canonical(reference), "case {}", case.name);
    }
}

#[test]
fn two_identical_groups_at_distance_one() {
    let d = DistanceMatrix::from_fn(40, |i, j| if (i < 20) == (j < 20) { 0.0 } else { 1.0 });
    let labels = hdbscan_cluster(&d, &ClusterConfig::default()).unwrap();
    assert!(labels.iter().all(Option::is_some));
    assert_eq!(canonical(labels.clone())[..20], vec![Some(0); 20][..]);
    assert_eq!(canonical(labels)[20..], vec![Some(1); 20][..]);
}

#[test]
fn row_permutation_permutes_labels() {
    let fixture: Fixture = serde_json::from_str(include_str!("fixtures/hdbscan_sklearn.json")).unwrap();
    let case = &fixture.cases[0];
    let cfg =
        ClusterConfig { min_cluster_size: case.min_cluster_size, min_samples: case.min_samples, ..Default::default() };
    let base = hdbscan_cluster(&euclidean(&case.points), &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut perm: Vec<usize> = (0..case.points.len()).collect();
    for i in (1..perm.len()).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let shuffled: Vec<[f64; 2]> = perm.iter().map(|&i| case.points[i]).collect();
    let labels = hdbscan_cluster(&euclidean(&shuffled), &cfg).unwrap();
    let expected: Vec<Option<usize>> = perm.iter().map(|&i| base[i]).collect();
    assert_eq!(canonical(labels), canonical(expected));
}

fn blob_table(rng: &mut ChaCha8Rng) -> FeatureTable {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for i in 0..80 {
        let centre = if i < 40 { 0.0 } else { 10.0 };
        a.push(centre + rng.random::<f64>() * 0.2);
        b.push(centre + rng.random::<f64>() * 0.2);
    }
    FeatureTable::from_features(vec![Feature::continuous("a", a), Feature::continuous("b", b)]).unwrap()
}

#[test]
fn separated_blobs_add_a_cluster_feature() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (out, outcome) = cluster_feature(&blob_table(&mut rng), &ClusterConfig::default());
    let ClusterOutcome::Appended { n_clusters, .. } = outcome else {
        panic!("expected a cluster feature: {outcome:?}")
    };
    assert_eq!(n_clusters, 2);
    let cluster = out.feature(CLUSTER_FEATURE).unwrap();
    assert!(cluster.synthetic);
    assert!((2..=3).contains(&cluster.n_categories()));
}

#[test]
fn uniform_noise_adds_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let cols: Vec<Feature> = ["a", "b", "c"]
        .iter()
        .map(|n| Feature::continuous(n, (0..120).map(|_| rng.random::<f64>()).collect()))
        .collect();
    let table = FeatureTable::from_features(cols).unwrap();
    let (out, outcome) = cluster_feature(&table, &ClusterConfig::default());
    assert!(matches!(outcome, ClusterOutcome::Discarded { .. }), "{outcome:?}");
    assert_eq!(out.features.len(), 3);
}

#[test]
fn gower_single_feature_example() {
    let table = FeatureTable::from_features(vec![Feature::continuous("v", vec![2.0, 7.0, 12.0])]).unwrap();
    let d = gower_distance_matrix(&table).unwrap();
    assert_eq!(d.get(0, 1), 0.5);
}
