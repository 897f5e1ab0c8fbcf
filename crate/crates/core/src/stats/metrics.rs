use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::topo_metric::DistanceMatrix;

/// Square count matrix; rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    labels: Vec<String>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = labels.len();
        if counts.len() != k || counts.iter().any(|r| r.len() != k) {
            return Err(Error::DimensionMismatch(format!(
                "confusion matrix must be {k}x{k} to match its labels"
            )));
        }
        Ok(Self { labels, counts })
    }

    /// Tallies `(true, predicted)` index pairs.
    pub fn from_pairs(labels: Vec<String>, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let k = labels.len();
        let mut counts = vec![vec![0u64; k]; k];
        for (t, p) in pairs {
            if t >= k || p >= k {
                return Err(Error::InvalidArgument(format!("class index out of range ({t}, {p})")));
            }
            counts[t][p] += 1;
        }
        Self::new(labels, counts)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    /// Unordered pairs `{i, j}` with any confusion in either direction.
    pub fn nonzero_off_diagonal_pairs(&self) -> usize {
        let k = self.len();
        (0..k)
            .flat_map(|i| ((i + 1)..k).map(move |j| (i, j)))
            .filter(|&(i, j)| self.counts[i][j] + self.counts[j][i] > 0)
            .count()
    }

    /// Reorders rows and columns to `order`, which must be a permutation of the labels.
    pub fn reordered(&self, order: &[String]) -> Result<Self> {
        if order.len() != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "cannot reorder {} classes to {} labels",
                self.len(),
                order.len()
            )));
        }
        let idx = order
            .iter()
            .map(|c| {
                self.labels
                    .iter()
                    .position(|l| l == c)
                    .ok_or_else(|| Error::UnknownCode(c.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let counts = idx
            .iter()
            .map(|&i| idx.iter().map(|&j| self.counts[i][j]).collect())
            .collect();
        Self::new(order.to_vec(), counts)
    }
}

/// Symmetric pairwise confusion rate: the mean of the two row-normalised
/// directed rates. Diagonal is zero.
pub fn confusion_rates(cm: &ConfusionMatrix) -> Result<DistanceMatrix> {
    let k = cm.len();
    let sums: Vec<u64> = (0..k).map(|i| cm.row_sum(i)).collect();
    if let Some(i) = sums.iter().position(|&s| s == 0) {
        return Err(Error::InvalidArgument(format!(
            "class `{}` has no samples (zero row sum)",
            cm.labels[i]
        )));
    }
    let rate = |i: usize, j: usize| cm.counts[i][j] as f64 / sums[i] as f64;
    let m = Matrix::from_fn(k, k, |i, j| if i == j { 0.0 } else { (rate(i, j) + rate(j, i)) / 2.0 });
    DistanceMatrix::new(cm.labels.clone(), m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub per_class_f1: Vec<f64>,
    pub macro_f1: f64,
}

/// Accuracy, per-class F1 (zero when precision + recall is zero), and the
/// unweighted mean F1.
pub fn classification_metrics(cm: &ConfusionMatrix) -> Result<ClassificationMetrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::InvalidArgument("confusion matrix is empty".into()));
    }
    let k = cm.len();
    let trace: u64 = (0..k).map(|i| cm.counts[i][i]).sum();
    let per_class_f1: Vec<f64> = (0..k)
        .map(|i| {
            let tp = cm.counts[i][i] as f64;
            let pred = cm.col_sum(i) as f64;
            let actual = cm.row_sum(i) as f64;
            let precision = if pred > 0.0 { tp / pred } else { 0.0 };
            let recall = if actual > 0.0 { tp / actual } else { 0.0 };
            if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            }
        })
        .collect();
    let macro_f1 = per_class_f1.iter().sum::<f64>() / k as f64;
    Ok(ClassificationMetrics {
        accuracy: trace as f64 / total as f64,
        per_class_f1,
        macro_f1,
    })
}
