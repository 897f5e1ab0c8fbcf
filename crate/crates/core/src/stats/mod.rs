//! Correlation, Mantel, McNemar, and classification metrics.

mod correlation;
mod mantel;
mod mcnemar;
mod metrics;
mod sensitivity;
pub mod special;

pub use correlation::{average_ranks, pearson, spearman};
pub use mantel::{
    mantel_null_distribution, mantel_test, CorrelationMethod, MantelResult, DEFAULT_PERMUTATIONS,
    TIE_TOL,
};
pub use mcnemar::{
    mcnemar, mcnemar_from_counts, McNemarResult, PairedOutcome, PairedPredictions, Prediction,
};
pub use metrics::{classification_metrics, confusion_rates, ClassificationMetrics, ConfusionMatrix};
pub use sensitivity::{
    weight_sensitivity, SensitivityResult, DEFAULT_AMPLITUDE, DEFAULT_RHO_THRESHOLD,
    DEFAULT_VECTORS,
};
