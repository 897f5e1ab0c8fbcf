//! Property suites shared by the `properties` and `acceptance` targets. Every
//! suite runs on a fixed proptest seed so reruns see the same cases.
#![allow(dead_code)]

use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed, TestCaseResult, TestRunner};

use crate::common;
use topodiag::embedding::{knn_retrieval, EmbeddingRecord, LabeledEmbeddings};
use topodiag::losses::{combined_loss, taca_loss, taml_loss, LossConfig, MiniBatch};
use topodiag::split::{build_split_manifest, Lighting, SampleMetadata, Tightness};
use topodiag::stats::{confusion_rates, mcnemar_from_counts, spearman, ConfusionMatrix};
use topodiag::topo_metric::{factor_matrices, perturb_weights, permute_distance_with};
use topodiag::{builtin_taxonomy, topo_distance, FactorWeights, Matrix};

pub const SEED: u64 = 0x70d0_5eed;
pub const CASES: u32 = 64;
const K: usize = 10;

pub type Suite = fn(u32) -> Result<(), String>;

pub const ALL: &[(&str, Suite)] = &[
    ("TACA scale and translation invariance", taca_scale_and_translation),
    ("TAML normalization invariance", taml_uniform_scaling),
    ("loss equivariance under sample permutation", losses_sample_permutation),
    ("loss invariance under class relabelling", losses_class_relabelling),
    ("Spearman monotone invariance", spearman_monotone),
    ("distance validity under random weights", distance_validity),
    ("perturbed weights on the simplex", perturbed_weights_simplex),
    ("McNemar swap symmetry", mcnemar_swap),
    ("confusion rates symmetric", confusion_rates_symmetric),
    ("k-NN exhaustive oracle agreement", knn_oracle_agreement),
    ("k-NN positive rescaling invariance", knn_rescaling),
    ("split partitions arbitrary metadata", split_partitions),
];

fn check<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> TestCaseResult) -> Result<(), String> {
    let config = Config {
        cases,
        rng_seed: RngSeed::Fixed(SEED),
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new(config).run(&strategy, test).map_err(|e| e.to_string())
}

fn batch_strategy() -> impl Strategy<Value = MiniBatch> {
    (K..40usize, 2..8usize).prop_flat_map(|(n, e)| {
        (
            prop::collection::vec(-1.0f64..1.0, n * e),
            prop::collection::vec(0..K, n - K),
            Just((n, e)),
        )
            .prop_map(|(x, extra, (n, e))| {
                let labels: Vec<usize> = (0..K).chain(extra).collect();
                MiniBatch::new(Matrix::from_fn(n, e, |i, j| x[i * e + j]), labels).unwrap()
            })
    })
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn map_batch(b: &MiniBatch, f: impl Fn(usize, usize, f64) -> f64) -> MiniBatch {
    let x = b.embeddings();
    b.with_embeddings(Matrix::from_fn(b.len(), b.dim(), |i, j| f(i, j, x[(i, j)])))
        .unwrap()
}

fn weights_strategy() -> impl Strategy<Value = FactorWeights> {
    prop::array::uniform5(0.01f64..1.0).prop_map(|w| FactorWeights::normalized(w).unwrap())
}

fn embedding_strategy(prefix: &'static str, labels: usize) -> impl Strategy<Value = LabeledEmbeddings> {
    (3..30usize, 2..6usize).prop_flat_map(move |(n, e)| {
        prop::collection::vec((prop::collection::vec(-1.0f32..1.0, e), 0..labels), n).prop_map(move |rows| {
            let records = rows
                .into_iter()
                .enumerate()
                .map(|(i, (mut v, l))| {
                    v[0] += 1e-3; // keep away from the zero vector
                    EmbeddingRecord { sample_id: format!("{prefix}{i:03}"), label: format!("L{l}"), vector: v }
                })
                .collect();
            LabeledEmbeddings::new(records).unwrap()
        })
    })
}

pub fn taca_scale_and_translation(cases: u32) -> Result<(), String> {
    check(cases, (batch_strategy(), 0.01f64..100.0, -5.0f64..5.0), |(b, s, shift)| {
        let d = common::builtin_distance();
        let cfg = LossConfig::default();
        let base = taca_loss(&b, &d, &cfg).unwrap().value;
        let scaled = taca_loss(&map_batch(&b, |_, _, v| s * v), &d, &cfg).unwrap().value;
        let moved = taca_loss(&map_batch(&b, |_, j, v| v + shift * (j as f64 + 1.0)), &d, &cfg).unwrap().value;
        prop_assert!((base - scaled).abs() < 1e-9, "{base} vs {scaled}");
        prop_assert!((base - moved).abs() < 1e-9, "{base} vs {moved}");
        Ok(())
    })
}

pub fn taml_uniform_scaling(cases: u32) -> Result<(), String> {
    check(cases, (batch_strategy(), 0.01f64..100.0), |(b, s)| {
        let d = common::builtin_distance();
        let cfg = LossConfig::default();
        let base = taml_loss(&b, &d, &cfg).unwrap().value;
        let scaled = taml_loss(&map_batch(&b, |_, _, v| s * v), &d, &cfg).unwrap().value;
        prop_assert!(close(base, scaled, 1e-9), "{base} vs {scaled}");
        Ok(())
    })
}

pub fn losses_sample_permutation(cases: u32) -> Result<(), String> {
    check(cases, (batch_strategy(), any::<u64>()), |(b, seed)| {
        let d = common::builtin_distance();
        let cfg = LossConfig::default();
        let n = b.len();
        let perm = topodiag::rng::random_permutation(&mut topodiag::rng::substream(seed, 0), n);
        let x = b.embeddings();
        let px = Matrix::from_fn(n, b.dim(), |i, j| x[(perm[i], j)]);
        let pl: Vec<usize> = perm.iter().map(|&i| b.labels()[i]).collect();
        let pb = MiniBatch::new(px, pl).unwrap();
        let zero = Matrix::zeros(n, b.dim());
        let outs = [
            (taca_loss(&b, &d, &cfg).unwrap(), taca_loss(&pb, &d, &cfg).unwrap()),
            (taml_loss(&b, &d, &cfg).unwrap(), taml_loss(&pb, &d, &cfg).unwrap()),
            (combined_loss(0.0, &zero, &b, &d, &cfg).unwrap(), combined_loss(0.0, &zero, &pb, &d, &cfg).unwrap()),
        ];
        for (o, p) in outs {
            prop_assert!(close(o.value, p.value, 1e-10));
            for (i, &src) in perm.iter().enumerate() {
                for j in 0..b.dim() {
                    prop_assert!((p.grad[(i, j)] - o.grad[(src, j)]).abs() < 1e-10);
                }
            }
        }
        Ok(())
    })
}

pub fn losses_class_relabelling(cases: u32) -> Result<(), String> {
    check(cases, (batch_strategy(), any::<u64>()), |(b, seed)| {
        let d = common::builtin_distance();
        let cfg = LossConfig::default();
        // sigma maps old class -> new class; the reference follows.
        let sigma = topodiag::rng::random_permutation(&mut topodiag::rng::substream(seed, 1), K);
        let mut inv = vec![0; K];
        for (old, &new) in sigma.iter().enumerate() {
            inv[new] = old;
        }
        let rd = permute_distance_with(&d, &inv);
        let rb = MiniBatch::new(b.embeddings().clone(), b.labels().iter().map(|&l| sigma[l]).collect()).unwrap();
        for (a, r) in [
            (taca_loss(&b, &d, &cfg).unwrap(), taca_loss(&rb, &rd, &cfg).unwrap()),
            (taml_loss(&b, &d, &cfg).unwrap(), taml_loss(&rb, &rd, &cfg).unwrap()),
        ] {
            prop_assert!(close(a.value, r.value, 1e-10), "{} vs {}", a.value, r.value);
            prop_assert!(a.grad.as_slice().iter().zip(r.grad.as_slice()).all(|(p, q)| (p - q).abs() < 1e-10));
        }
        Ok(())
    })
}

pub fn spearman_monotone(cases: u32) -> Result<(), String> {
    check(cases, prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..40), |xy| {
        let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
        prop_assume!(x.iter().any(|v| *v != x[0]) && y.iter().any(|v| *v != y[0]));
        let r = spearman(&x, &y).unwrap();
        let fx: Vec<f64> = x.iter().map(|v| v.powi(3) + v).collect();
        let gy: Vec<f64> = y.iter().map(|v| v.exp()).collect();
        prop_assert!((spearman(&fx, &gy).unwrap() - r).abs() < 1e-12);
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        prop_assert!((spearman(&x, &neg).unwrap() + r).abs() < 1e-12);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
        Ok(())
    })
}

pub fn distance_validity(cases: u32) -> Result<(), String> {
    check(cases, weights_strategy(), |w| {
        let d = topo_distance(&factor_matrices(&builtin_taxonomy()), &w);
        for i in 0..d.len() {
            prop_assert_eq!(d.get(i, i), 0.0);
            for j in 0..d.len() {
                prop_assert!(d.get(i, j) >= 0.0);
                prop_assert_eq!(d.get(i, j), d.get(j, i));
            }
        }
        Ok(())
    })
}

pub fn perturbed_weights_simplex(cases: u32) -> Result<(), String> {
    check(cases, (weights_strategy(), 0.01f64..=1.0, any::<u64>()), |(w, a, seed)| {
        for v in perturb_weights(&w, a, seed, 25).unwrap() {
            let arr = v.as_array();
            prop_assert!((arr.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(arr.iter().all(|x| *x >= 0.0));
            if a < 1.0 {
                prop_assert!(arr.iter().all(|x| *x > 0.0));
            }
        }
        Ok(())
    })
}

pub fn mcnemar_swap(cases: u32) -> Result<(), String> {
    check(cases, (0u64..500, 0u64..500), |(b, c)| {
        let x = mcnemar_from_counts(b, c, 0.05, 3).unwrap();
        let y = mcnemar_from_counts(c, b, 0.05, 3).unwrap();
        prop_assert_eq!(x.chi2.to_bits(), y.chi2.to_bits());
        prop_assert_eq!(x.p_value.to_bits(), y.p_value.to_bits());
        prop_assert!(x.p_value > 0.0 && x.p_value <= 1.0);
        Ok(())
    })
}

pub fn confusion_rates_symmetric(cases: u32) -> Result<(), String> {
    check(cases, prop::collection::vec(prop::collection::vec(0u64..50, 4), 4), |mut counts| {
        for (i, row) in counts.iter_mut().enumerate() {
            row[i] += 1;
        }
        let labels: Vec<String> = ["A", "B", "C", "D"].map(String::from).to_vec();
        let r = confusion_rates(&ConfusionMatrix::new(labels, counts).unwrap()).unwrap();
        for i in 0..4 {
            prop_assert_eq!(r.get(i, i), 0.0);
            for j in 0..4 {
                prop_assert_eq!(r.get(i, j), r.get(j, i));
            }
        }
        Ok(())
    })
}

pub fn knn_oracle_agreement(cases: u32) -> Result<(), String> {
    check(cases, (embedding_strategy("tr", 3), embedding_strategy("te", 3)), |(train, test)| {
        prop_assume!(train.dim() == test.dim());
        let ks: Vec<usize> = [1, 2, 3].into_iter().filter(|&k| k <= train.len()).collect();
        let r = knn_retrieval(&train, &test, &ks).unwrap();
        for k in ks {
            prop_assert_eq!(r.per_k[&k], common::knn_oracle(&train, &test, k));
        }
        Ok(())
    })
}

pub fn knn_rescaling(cases: u32) -> Result<(), String> {
    check(cases, (embedding_strategy("tr", 3), prop::collection::vec(-4i32..4, 30)), |(train, exps)| {
        let test = LabeledEmbeddings::new(
            train
                .records()
                .iter()
                .take(5)
                .map(|r| EmbeddingRecord { sample_id: format!("q{}", r.sample_id), ..r.clone() })
                .collect(),
        )
        .unwrap();
        // Powers of two keep the rescaled f32 values exact.
        let scaled = LabeledEmbeddings::new(
            train
                .records()
                .iter()
                .zip(&exps)
                .map(|(r, &e)| EmbeddingRecord { vector: r.vector.iter().map(|v| v * 2f32.powi(e)).collect(), ..r.clone() })
                .collect(),
        )
        .unwrap();
        let ks = [1, train.len().min(3)];
        prop_assert_eq!(knn_retrieval(&train, &test, &ks).unwrap(), knn_retrieval(&scaled, &test, &ks).unwrap());
        Ok(())
    })
}

pub fn split_partitions(cases: u32) -> Result<(), String> {
    let rows = prop::collection::vec((0..10usize, 0..3usize, 0..3usize), 1..200);
    check(cases, (rows, 0.05f64..0.95, any::<u64>()), |(rows, holdout, seed)| {
        let tax = builtin_taxonomy();
        let codes = tax.codes();
        let meta: Vec<SampleMetadata> = rows
            .iter()
            .enumerate()
            .map(|(i, &(c, l, t))| SampleMetadata {
                path: format!("img_{i}.jpg"),
                class_code: codes[c].clone(),
                lighting: [Lighting::DL, Lighting::SLA, Lighting::SLS][l],
                tightness: [Tightness::Set, Tightness::Loose, Tightness::VeryLoose][t],
                instance: 1,
            })
            .collect();
        let m = build_split_manifest(&meta, &tax, holdout, seed).unwrap();
        let mut all: Vec<&String> = m.train.iter().chain(&m.val).chain(&m.test).collect();
        prop_assert_eq!(all.len(), meta.len());
        all.sort();
        all.dedup();
        prop_assert_eq!(all.len(), meta.len());
        let n_set = meta.iter().filter(|x| x.tightness == Tightness::Set).count();
        prop_assert_eq!(m.test.len(), n_set);
        let rest = (meta.len() - n_set) as f64;
        prop_assert_eq!(m.val.len(), (holdout * rest).round() as usize);
        Ok(())
    })
}
