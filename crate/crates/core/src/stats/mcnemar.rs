use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::special::chi2_sf_1dof;
use crate::error::{Error, Result};

/// One classifier output for one sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_id: String,
    pub true_label: String,
    pub predicted_label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedOutcome {
    pub sample_id: String,
    pub correct_a: bool,
    pub correct_b: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairedPredictions {
    entries: Vec<PairedOutcome>,
}

impl PairedPredictions {
    pub fn new(entries: Vec<PairedOutcome>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidArgument("paired predictions are empty".into()));
        }
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.sample_id.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate sample id `{}` in paired predictions",
                    e.sample_id
                )));
            }
        }
        Ok(Self { entries })
    }

    /// Joins two prediction lists on `sample_id`, in the order of `a`.
    /// Any id present in only one list is an error that names every such id.
    pub fn join(a: &[Prediction], b: &[Prediction]) -> Result<Self> {
        let index = |preds: &[Prediction], name: &str| -> Result<HashMap<String, usize>> {
            let mut map = HashMap::with_capacity(preds.len());
            for (i, p) in preds.iter().enumerate() {
                if map.insert(p.sample_id.clone(), i).is_some() {
                    return Err(Error::InvalidArgument(format!(
                        "duplicate sample id `{}` in predictions {name}",
                        p.sample_id
                    )));
                }
            }
            Ok(map)
        };
        let ia = index(a, "A")?;
        let ib = index(b, "B")?;
        let only_a: Vec<&str> = a
            .iter()
            .filter(|p| !ib.contains_key(&p.sample_id))
            .map(|p| p.sample_id.as_str())
            .collect();
        let only_b: Vec<&str> = b
            .iter()
            .filter(|p| !ia.contains_key(&p.sample_id))
            .map(|p| p.sample_id.as_str())
            .collect();
        if !only_a.is_empty() || !only_b.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "unmatched sample ids; only in A: [{}]; only in B: [{}]",
                only_a.join(", "),
                only_b.join(", ")
            )));
        }
        let mut entries = Vec::with_capacity(a.len());
        for pa in a {
            let pb = &b[ib[&pa.sample_id]];
            if pa.true_label != pb.true_label {
                return Err(Error::InvalidArgument(format!(
                    "sample `{}` has true label `{}` in A but `{}` in B",
                    pa.sample_id, pa.true_label, pb.true_label
                )));
            }
            entries.push(PairedOutcome {
                sample_id: pa.sample_id.clone(),
                correct_a: pa.predicted_label == pa.true_label,
                correct_b: pb.predicted_label == pb.true_label,
            });
        }
        Self::new(entries)
    }

    pub fn entries(&self) -> &[PairedOutcome] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `(b, c)`: A wrong and B right, A right and B wrong.
    pub fn discordant_counts(&self) -> (u64, u64) {
        self.entries.iter().fold((0, 0), |(b, c), e| match (e.correct_a, e.correct_b) {
            (false, true) => (b + 1, c),
            (true, false) => (b, c + 1),
            _ => (b, c),
        })
    }

    pub fn swapped(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|e| PairedOutcome {
                    sample_id: e.sample_id.clone(),
                    correct_a: e.correct_b,
                    correct_b: e.correct_a,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McNemarResult {
    pub b: u64,
    pub c: u64,
    pub chi2: f64,
    pub p_value: f64,
    /// Bonferroni-corrected level, `alpha / n_comparisons`.
    pub corrected_alpha: f64,
    pub significant: bool,
}

pub fn mcnemar(pp: &PairedPredictions, alpha: f64, n_comparisons: usize) -> Result<McNemarResult> {
    let (b, c) = pp.discordant_counts();
    mcnemar_from_counts(b, c, alpha, n_comparisons)
}

/// Continuity-corrected McNemar statistic `(|b - c| - 1)^2 / (b + c)`.
///
/// The numerator is not clamped, so `b = c` yields `1 / (b + c)`.
pub fn mcnemar_from_counts(b: u64, c: u64, alpha: f64, n_comparisons: usize) -> Result<McNemarResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if n_comparisons == 0 {
        return Err(Error::InvalidArgument("number of comparisons must be >= 1".into()));
    }
    let (chi2, p_value) = if b + c == 0 {
        (0.0, 1.0)
    } else {
        let diff = (b.abs_diff(c) as f64 - 1.0).powi(2);
        let chi2 = diff / (b + c) as f64;
        (chi2, chi2_sf_1dof(chi2))
    };
    let corrected_alpha = alpha / n_comparisons as f64;
    Ok(McNemarResult {
        b,
        c,
        chi2,
        p_value,
        corrected_alpha,
        significant: p_value < corrected_alpha,
    })
}
