mod common;

use topodiag::embedding::{ablation_compare, alignment, centroid_distance_matrix, knn_retrieval};
use topodiag::topo_metric::permute_distance;
use topodiag::{builtin_taxonomy, Error};

#[test]
fn mds_fixture_reproduces_reference_geometry() {
    let d = common::builtin_distance();
    let emb = common::mds_embedding(&d, 6, 0.01);
    let r = alignment(&emb, &d, 999, 42).unwrap();
    assert!(r.spearman > 0.99, "spearman {}", r.spearman);
    assert!(r.pearson > 0.99, "pearson {}", r.pearson);
    assert_eq!(r.n_pairs, 45);
    assert!(r.mantel_p < 0.01);
}

#[test]
fn centroids_follow_taxonomy_order() {
    let d = common::builtin_distance();
    let emb = common::mds_embedding(&d, 2, 0.05);
    let c = centroid_distance_matrix(&emb, &builtin_taxonomy()).unwrap();
    assert_eq!(c.labels(), d.labels());
}

#[test]
fn permuted_reference_scores_lower_against_real_metric() {
    let d = common::builtin_distance();
    let real = common::mds_embedding(&d, 4, 0.01);
    let shuffled = common::mds_embedding(&permute_distance(&d, 3), 4, 0.01);
    let rows = ablation_compare(
        &[("real".into(), real), ("permuted".into(), shuffled)],
        &d,
        999,
        42,
    )
    .unwrap();
    assert_eq!(rows[0].name, "real");
    assert!(rows[0].alignment.spearman > rows[1].alignment.spearman);
}

#[test]
fn alignment_needs_three_classes() {
    let d = common::builtin_distance();
    let full = common::mds_embedding(&d, 2, 0.01);
    let two = topodiag::embedding::LabeledEmbeddings::new(
        full.records().iter().filter(|r| r.label == "OHK" || r.label == "SK").cloned().collect(),
    )
    .unwrap();
    assert!(matches!(alignment(&two, &d, 99, 1), Err(Error::Degenerate(_))));
}

#[test]
fn retrieval_on_mds_fixture_matches_oracle() {
    let d = common::builtin_distance();
    let train = common::mds_embedding(&d, 6, 0.001);
    let test = common::mds_embedding(&d, 2, 0.0005);
    assert!(train.records().iter().all(|r| r.vector.iter().any(|v| *v != 0.0)));
    let r = knn_retrieval(&train, &test, &[1, 3]).unwrap();
    for k in [1, 3] {
        assert_eq!(r.per_k[&k], common::knn_oracle(&train, &test, k));
    }
}
