//! Embedding-space diagnostics: centroid alignment with a reference metric,
//! cosine k-NN retrieval, and the permuted-reference ablation table.

use std::collections::{BTreeMap, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::stats::{mantel_test, pearson, spearman, CorrelationMethod};
use crate::taxonomy::Taxonomy;
use crate::topo_metric::DistanceMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub sample_id: String,
    pub label: String,
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbeddings {
    records: Vec<EmbeddingRecord>,
    dim: usize,
}

impl LabeledEmbeddings {
    pub fn new(records: Vec<EmbeddingRecord>) -> Result<Self> {
        let dim = records.first().map_or(0, |r| r.vector.len());
        let mut ids = HashSet::new();
        for r in &records {
            if !ids.insert(r.sample_id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate sample id `{}`", r.sample_id)));
            }
            if r.vector.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "sample `{}` has {} components, expected {dim}",
                    r.sample_id,
                    r.vector.len()
                )));
            }
            if r.vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "sample `{}` has non-finite components",
                    r.sample_id
                )));
            }
        }
        Ok(Self { records, dim })
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Every label must be a taxonomy code.
    pub fn check_labels(&self, tax: &Taxonomy) -> Result<()> {
        match self.records.iter().find(|r| tax.index_of(&r.label).is_none()) {
            Some(r) => Err(Error::UnknownCode(r.label.clone())),
            None => Ok(()),
        }
    }
}

/// Euclidean distances between class means over `labels`, skipping labels
/// with no samples. Returned labels keep the order of `labels`.
pub fn centroid_distances(emb: &LabeledEmbeddings, labels: &[String]) -> Result<DistanceMatrix> {
    if emb.is_empty() {
        return Err(Error::InvalidArgument("embedding set is empty".into()));
    }
    let index: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let mut sums = vec![vec![0.0f64; emb.dim()]; labels.len()];
    let mut counts = vec![0usize; labels.len()];
    for r in emb.records() {
        let &c = index
            .get(r.label.as_str())
            .ok_or_else(|| Error::UnknownCode(r.label.clone()))?;
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(&r.vector) {
            *s += f64::from(*v);
        }
    }
    let present: Vec<usize> = (0..labels.len()).filter(|&c| counts[c] > 0).collect();
    if present.len() < labels.len() {
        let missing: Vec<&str> = (0..labels.len())
            .filter(|&c| counts[c] == 0)
            .map(|c| labels[c].as_str())
            .collect();
        log::warn!("no embeddings for classes {missing:?}; restricting to present classes");
    }
    let means: Vec<Vec<f64>> = present
        .iter()
        .map(|&c| sums[c].iter().map(|s| s / counts[c] as f64).collect())
        .collect();
    let k = present.len();
    let m = Matrix::from_fn(k, k, |i, j| {
        if i == j {
            0.0
        } else {
            means[i]
                .iter()
                .zip(&means[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        }
    });
    let codes = present.iter().map(|&c| labels[c].clone()).collect();
    DistanceMatrix::new(codes, m)
}

pub fn centroid_distance_matrix(emb: &LabeledEmbeddings, tax: &Taxonomy) -> Result<DistanceMatrix> {
    centroid_distances(emb, &tax.codes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub spearman: f64,
    /// On raw Euclidean centroid distances, so not scale-free like Spearman.
    pub pearson: f64,
    pub mantel_statistic: f64,
    pub mantel_p: f64,
    pub n_pairs: usize,
    pub classes: Vec<String>,
}

/// Correlates centroid distances with `d_ref` over the classes present in `emb`.
pub fn alignment(
    emb: &LabeledEmbeddings,
    d_ref: &DistanceMatrix,
    n_perm: usize,
    seed: u64,
) -> Result<AlignmentResult> {
    let cent = centroid_distances(emb, d_ref.labels())?;
    if cent.len() < 3 {
        return Err(Error::Degenerate(format!(
            "alignment needs at least 3 present classes, found {}",
            cent.len()
        )));
    }
    let reference = d_ref.restrict(cent.labels())?;
    let (x, y) = (cent.upper_triangle(), reference.upper_triangle());
    let mantel = mantel_test(
        cent.values(),
        reference.values(),
        n_perm,
        seed,
        CorrelationMethod::Spearman,
    )?;
    Ok(AlignmentResult {
        spearman: spearman(&x, &y)?,
        pearson: pearson(&x, &y)?,
        mantel_statistic: mantel.statistic,
        mantel_p: mantel.p_value,
        n_pairs: x.len(),
        classes: cent.labels().to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub per_k: BTreeMap<usize, f64>,
    pub n_test: usize,
}

fn unit_vectors(emb: &LabeledEmbeddings) -> Result<Vec<Vec<f64>>> {
    emb.records()
        .iter()
        .map(|r| {
            let n = r.vector.iter().map(|v| f64::from(*v).powi(2)).sum::<f64>().sqrt();
            if n == 0.0 {
                return Err(Error::ZeroVector(r.sample_id.clone()));
            }
            Ok(r.vector.iter().map(|v| f64::from(*v) / n).collect())
        })
        .collect()
}

/// Modal label among the first `k` ranked neighbours. Ties go to the tied
/// label that appears earliest in the ranking.
fn vote<'a>(ranked: &[usize], k: usize, labels: &[&'a str]) -> &'a str {
    let mut tally: Vec<(&str, usize, usize)> = Vec::new(); // (label, votes, first rank)
    for (rank, &i) in ranked[..k].iter().enumerate() {
        match tally.iter_mut().find(|t| t.0 == labels[i]) {
            Some(t) => t.1 += 1,
            None => tally.push((labels[i], 1, rank)),
        }
    }
    tally
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2)))
        .map(|t| t.0)
        .expect("k >= 1")
}

/// Cosine k-NN majority vote from `train` for each sample in `test`.
///
/// Neighbours are ranked by descending similarity, equal similarities by
/// ascending train `sample_id`.
pub fn knn_retrieval(
    train: &LabeledEmbeddings,
    test: &LabeledEmbeddings,
    ks: &[usize],
) -> Result<RetrievalResult> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidArgument("k-NN needs non-empty train and test sets".into()));
    }
    if train.dim() != test.dim() {
        return Err(Error::DimensionMismatch(format!(
            "train dimension {} differs from test dimension {}",
            train.dim(),
            test.dim()
        )));
    }
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > train.len()) {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must lie in 1..={}",
            train.len()
        )));
    }
    let train_unit = unit_vectors(train)?;
    let test_unit = unit_vectors(test)?;
    let train_labels: Vec<&str> = train.records().iter().map(|r| r.label.as_str()).collect();
    let train_ids: Vec<&str> = train.records().iter().map(|r| r.sample_id.as_str()).collect();
    let max_k = ks.iter().copied().max().unwrap_or(0);

    let hits: Vec<Vec<bool>> = test_unit
        .par_iter()
        .zip(test.records().par_iter())
        .map(|(q, rec)| {
            let sims: Vec<f64> = train_unit
                .iter()
                .map(|t| t.iter().zip(q).map(|(a, b)| a * b).sum())
                .collect();
            let mut order: Vec<usize> = (0..train_unit.len()).collect();
            let cmp = |&a: &usize, &b: &usize| {
                sims[b]
                    .total_cmp(&sims[a])
                    .then_with(|| train_ids[a].cmp(train_ids[b]))
            };
            if max_k < order.len() {
                order.select_nth_unstable_by(max_k, cmp);
                order.truncate(max_k);
            }
            order.sort_by(cmp);
            ks.iter().map(|&k| vote(&order, k, &train_labels) == rec.label).collect()
        })
        .collect();

    let n_test = test.len();
    let per_k = ks
        .iter()
        .enumerate()
        .map(|(col, &k)| {
            let correct = hits.iter().filter(|h| h[col]).count();
            (k, correct as f64 / n_test as f64)
        })
        .collect();
    Ok(RetrievalResult { per_k, n_test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub alignment: AlignmentResult,
}

/// Alignment of each named embedding set against the same real reference.
pub fn ablation_compare(
    sets: &[(String, LabeledEmbeddings)],
    d_real: &DistanceMatrix,
    n_perm: usize,
    seed: u64,
) -> Result<Vec<AblationRow>> {
    sets.iter()
        .map(|(name, emb)| {
            Ok(AblationRow {
                name: name.clone(),
                alignment: alignment(emb, d_real, n_perm, seed)?,
            })
        })
        .collect()
}
