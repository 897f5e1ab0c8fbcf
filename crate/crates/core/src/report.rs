//! Aggregated diagnostic report and the go/no-go verdict.
//!
//! A config names input files; every section whose inputs are present is
//! computed and the rest are listed under `skipped`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embedding::{alignment, knn_retrieval, AblationRow, RetrievalResult};
use crate::error::{Error, Result};
use crate::io::{read_confusion_csv, read_embeddings, read_predictions_csv, read_text};
use crate::knot_math::{
    default_assignments, distinct_assignments, invariant_distance, validate_heuristic,
    HeuristicValidation, KnotInvariants, CHIRALITY_CAVEAT, NORMALIZATION_NOTE,
};
use crate::stats::{
    confusion_rates, mantel_test, mcnemar, weight_sensitivity, ConfusionMatrix, CorrelationMethod,
    MantelResult, McNemarResult, PairedPredictions, Prediction, DEFAULT_AMPLITUDE,
    DEFAULT_PERMUTATIONS, DEFAULT_RHO_THRESHOLD, DEFAULT_VECTORS,
};
use crate::taxonomy::{builtin_taxonomy, load_taxonomy_file, Taxonomy};
use crate::topo_metric::{factor_matrices, topo_distance, DistanceMatrix, FactorWeights, FSK_FMB_REPORTED};

pub const DEFAULT_GATE: f64 = 0.01;
pub const DEFAULT_MIN_NONZERO_PAIRS: usize = 5;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_ALPHA: f64 = 0.05;

pub const FSK_FMB_NOTE: &str = "evaluating the five-factor formula on the catalog tables gives 0.1875 \
for FSK-FMB; 0.150 is the value printed alongside the confused-pair discussion";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Go,
    NoGo,
    Underpowered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelInput {
    pub name: String,
    pub confusion: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedPath {
    pub name: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivitySettings {
    pub amplitude: f64,
    pub vectors: usize,
    pub threshold: f64,
}

impl Default for SensitivitySettings {
    fn default() -> Self {
        Self {
            amplitude: DEFAULT_AMPLITUDE,
            vectors: DEFAULT_VECTORS,
            threshold: DEFAULT_RHO_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalInput {
    pub train: PathBuf,
    pub test: PathBuf,
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
}

fn default_ks() -> Vec<usize> {
    vec![1, 5, 10]
}

/// Report configuration. Relative paths resolve against the config file's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub taxonomy: Option<PathBuf>,
    pub weights: Option<[f64; 5]>,
    pub gate_threshold: f64,
    pub min_nonzero_pairs: usize,
    pub permutations: usize,
    pub seed: u64,
    pub method: CorrelationMethod,
    pub alpha: f64,
    pub comparisons: Option<usize>,
    pub models: Vec<ModelInput>,
    pub sensitivity: Option<SensitivitySettings>,
    pub embeddings: Vec<NamedPath>,
    pub retrieval: Option<RetrievalInput>,
    pub invariants: bool,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            taxonomy: None,
            weights: None,
            gate_threshold: DEFAULT_GATE,
            min_nonzero_pairs: DEFAULT_MIN_NONZERO_PAIRS,
            permutations: DEFAULT_PERMUTATIONS,
            seed: DEFAULT_SEED,
            method: CorrelationMethod::Spearman,
            alpha: DEFAULT_ALPHA,
            comparisons: None,
            models: Vec::new(),
            sensitivity: None,
            embeddings: Vec::new(),
            retrieval: None,
            invariants: false,
        }
    }
}

impl ReportConfig {
    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::InvalidArgument("report config lists no models".into()));
        }
        if !(self.gate_threshold > 0.0 && self.gate_threshold < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "gate_threshold must lie in (0, 1), got {}",
                self.gate_threshold
            )));
        }
        if self.permutations == 0 {
            return Err(Error::InvalidArgument("permutations must be positive".into()));
        }
        Ok(())
    }
}

pub fn load_report_config(path: &Path) -> Result<ReportConfig> {
    let text = read_text(path)?;
    let cfg: ReportConfig =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
    cfg.validate().map_err(|e| Error::file(path, e.to_string()))?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairValue {
    pub a: String,
    pub b: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discrepancy {
    pub computed: f64,
    pub reported: f64,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceSummary {
    pub labels: Vec<String>,
    pub weights: FactorWeights,
    pub matrix: Vec<Vec<f64>>,
    pub closest: PairValue,
    pub farthest: PairValue,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fsk_fmb: Option<Discrepancy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMantel {
    pub name: String,
    pub nonzero_off_diagonal_pairs: usize,
    pub total_pairs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mantel: Option<MantelResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McNemarRow {
    pub a: String,
    pub b: String,
    pub result: McNemarResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub name: String,
    pub baseline_rho: f64,
    pub mean_rho: f64,
    pub std_rho: f64,
    pub threshold: f64,
    pub fraction_below: f64,
    pub vectors: usize,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantSection {
    pub knots: Vec<(String, KnotInvariants)>,
    pub all_consistent: bool,
    pub validation: HeuristicValidation,
    pub normalization: String,
    pub caveat: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub section: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub tool: String,
    pub version: String,
    pub config: ReportConfig,
    pub verdict: Verdict,
    pub distance_summary: DistanceSummary,
    pub mantel_results: Vec<ModelMantel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mcnemar_table: Option<Vec<McNemarRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sensitivity_summary: Option<Vec<SensitivityRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alignment_table: Option<Vec<AblationRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retrieval_table: Option<RetrievalResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub invariant_validation: Option<InvariantSection>,
    pub skipped: Vec<Skipped>,
    /// Inputs of optional sections that failed to load or compute.
    pub errors: Vec<String>,
}

impl DiagnosticReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// Per-model gate: too few observed confusions means no decision.
pub fn model_verdict(nonzero_pairs: usize, p_value: Option<f64>, gate: f64, min_pairs: usize) -> Verdict {
    if nonzero_pairs < min_pairs {
        Verdict::Underpowered
    } else if p_value.is_some_and(|p| p < gate) {
        Verdict::Go
    } else {
        Verdict::NoGo
    }
}

/// GO if any adequately powered model passes the gate, UNDERPOWERED if no
/// model is adequately powered, NO_GO otherwise.
pub fn overall_verdict(models: &[Verdict]) -> Verdict {
    if models.contains(&Verdict::Go) {
        Verdict::Go
    } else if models.iter().all(|v| *v == Verdict::Underpowered) {
        Verdict::Underpowered
    } else {
        Verdict::NoGo
    }
}

/// Mantel test of `d` against the symmetrised confusion rates of `cm`.
pub fn model_mantel(
    name: &str,
    cm: &ConfusionMatrix,
    d: &DistanceMatrix,
    cfg: &ReportConfig,
) -> Result<ModelMantel> {
    let d = d.restrict(cm.labels())?;
    let rates = confusion_rates(cm)?;
    let k = cm.len();
    let nonzero = cm.nonzero_off_diagonal_pairs();
    let (mantel, error) = match mantel_test(d.values(), rates.values(), cfg.permutations, cfg.seed, cfg.method) {
        Ok(m) => (Some(m), None),
        Err(e) if e.kind() == crate::error::ErrorKind::Computation => (None, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    Ok(ModelMantel {
        name: name.to_string(),
        nonzero_off_diagonal_pairs: nonzero,
        total_pairs: k * (k - 1) / 2,
        verdict: model_verdict(nonzero, mantel.map(|m| m.p_value), cfg.gate_threshold, cfg.min_nonzero_pairs),
        mantel,
        error,
    })
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn distance_summary(d: &DistanceMatrix, w: FactorWeights) -> DistanceSummary {
    let labels = d.labels().to_vec();
    let mut closest: Option<PairValue> = None;
    let mut farthest: Option<PairValue> = None;
    for i in 0..d.len() {
        for j in (i + 1)..d.len() {
            let pv = || PairValue {
                a: labels[i].clone(),
                b: labels[j].clone(),
                value: d.get(i, j),
            };
            if closest.as_ref().is_none_or(|c| d.get(i, j) < c.value) {
                closest = Some(pv());
            }
            if farthest.as_ref().is_none_or(|c| d.get(i, j) > c.value) {
                farthest = Some(pv());
            }
        }
    }
    let fsk_fmb = d.lookup("FSK", "FMB").ok().map(|computed| Discrepancy {
        computed,
        reported: FSK_FMB_REPORTED,
        note: FSK_FMB_NOTE.to_string(),
    });
    DistanceSummary {
        matrix: d.values().to_rows(),
        labels,
        weights: w,
        closest: closest.expect("taxonomy has at least two classes"),
        farthest: farthest.expect("taxonomy has at least two classes"),
        fsk_fmb,
    }
}

struct Collector {
    skipped: Vec<Skipped>,
    errors: Vec<String>,
}

impl Collector {
    fn skip(&mut self, section: &str, reason: impl Into<String>) {
        self.skipped.push(Skipped {
            section: section.into(),
            reason: reason.into(),
        });
    }

    /// Records a failure of an optional section and returns `None`.
    fn attempt<T>(&mut self, section: &str, r: Result<T>) -> Option<T> {
        match r {
            Ok(v) => Some(v),
            Err(e) => {
                self.errors.push(format!("{section}: {e}"));
                self.skip(section, format!("failed: {e}"));
                None
            }
        }
    }
}

/// Runs every configured analysis. Model confusion matrices and the taxonomy
/// are required; failures elsewhere become `skipped` entries plus `errors`.
pub fn run_report(cfg: &ReportConfig, base: &Path) -> Result<DiagnosticReport> {
    cfg.validate()?;
    let tax: Taxonomy = match &cfg.taxonomy {
        Some(p) => load_taxonomy_file(&resolve(base, p))?,
        None => builtin_taxonomy(),
    };
    let weights = match cfg.weights {
        Some(w) => FactorWeights::from_user(w)?,
        None => FactorWeights::DEFAULT,
    };
    let fm = factor_matrices(&tax);
    let d = topo_distance(&fm, &weights);

    let mut models = Vec::with_capacity(cfg.models.len());
    for m in &cfg.models {
        let path = resolve(base, &m.confusion);
        let cm = read_confusion_csv(&path)?;
        let mm = model_mantel(&m.name, &cm, &d, cfg).map_err(|e| Error::file(&path, e.to_string()))?;
        models.push((m, cm, mm));
    }
    let verdict = overall_verdict(&models.iter().map(|(_, _, mm)| mm.verdict).collect::<Vec<_>>());

    let mut col = Collector {
        skipped: Vec::new(),
        errors: Vec::new(),
    };

    let with_preds: Vec<(&str, PathBuf)> = models
        .iter()
        .filter_map(|(m, _, _)| m.predictions.as_ref().map(|p| (m.name.as_str(), resolve(base, p))))
        .collect();
    let mcnemar_table = if with_preds.len() < 2 {
        col.skip("mcnemar_table", "fewer than two models with predictions");
        None
    } else {
        let loaded: Result<Vec<(&str, Vec<Prediction>)>> = with_preds
            .iter()
            .map(|(n, p)| Ok((*n, read_predictions_csv(p)?)))
            .collect();
        let table = loaded.and_then(|loaded| {
            let n_pairs = loaded.len() * (loaded.len() - 1) / 2;
            let n_comp = cfg.comparisons.unwrap_or(n_pairs);
            let mut rows = Vec::with_capacity(n_pairs);
            for i in 0..loaded.len() {
                for j in (i + 1)..loaded.len() {
                    let pp = PairedPredictions::join(&loaded[i].1, &loaded[j].1)?;
                    rows.push(McNemarRow {
                        a: loaded[i].0.to_string(),
                        b: loaded[j].0.to_string(),
                        result: mcnemar(&pp, cfg.alpha, n_comp)?,
                    });
                }
            }
            Ok(rows)
        });
        col.attempt("mcnemar_table", table)
    };

    let sensitivity_summary = match &cfg.sensitivity {
        None => {
            col.skip("sensitivity_summary", "not configured");
            None
        }
        Some(s) => {
            let rows: Result<Vec<SensitivityRow>> = models
                .iter()
                .map(|(m, cm, _)| {
                    let cm = cm.reordered(fm.labels())?;
                    let r = weight_sensitivity(&cm, &fm, &weights, s.amplitude, s.vectors, cfg.seed, s.threshold)?;
                    Ok(SensitivityRow {
                        name: m.name.clone(),
                        baseline_rho: r.baseline_rho,
                        mean_rho: r.mean_rho,
                        std_rho: r.std_rho,
                        threshold: r.threshold,
                        fraction_below: r.fraction_below,
                        vectors: s.vectors,
                        amplitude: s.amplitude,
                    })
                })
                .collect();
            col.attempt("sensitivity_summary", rows)
        }
    };

    let alignment_table = if cfg.embeddings.is_empty() {
        col.skip("alignment_table", "no embeddings configured");
        None
    } else {
        let rows: Result<Vec<AblationRow>> = cfg
            .embeddings
            .iter()
            .map(|e| {
                let path = resolve(base, &e.path);
                let emb = read_embeddings(&path, &tax)?;
                let a = alignment(&emb, &d, cfg.permutations, cfg.seed).map_err(|err| Error::file(&path, err.to_string()))?;
                Ok(AblationRow {
                    name: e.name.clone(),
                    alignment: a,
                })
            })
            .collect();
        col.attempt("alignment_table", rows)
    };

    let retrieval_table = match &cfg.retrieval {
        None => {
            col.skip("retrieval_table", "not configured");
            None
        }
        Some(r) => {
            let res = read_embeddings(&resolve(base, &r.train), &tax)
                .and_then(|train| Ok((train, read_embeddings(&resolve(base, &r.test), &tax)?)))
                .and_then(|(train, test)| knn_retrieval(&train, &test, &r.ks));
            col.attempt("retrieval_table", res)
        }
    };

    let invariant_validation = if !cfg.invariants {
        col.skip("invariant_validation", "not configured");
        None
    } else {
        col.attempt("invariant_validation", invariant_section(&d))
    };

    Ok(DiagnosticReport {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        verdict,
        distance_summary: distance_summary(&d, weights),
        mantel_results: models.into_iter().map(|(_, _, mm)| mm).collect(),
        mcnemar_table,
        sensitivity_summary,
        alignment_table,
        retrieval_table,
        invariant_validation,
        skipped: col.skipped,
        errors: col.errors,
    })
}

/// Invariant-distance check over the distinct default knot assignments.
pub fn invariant_section(d: &DistanceMatrix) -> Result<InvariantSection> {
    let knots = distinct_assignments(&default_assignments());
    let inv = invariant_distance(&knots)?;
    let validation = validate_heuristic(&inv, d)?;
    Ok(InvariantSection {
        all_consistent: default_assignments().iter().all(|(_, k)| k.is_consistent()),
        knots,
        validation,
        normalization: NORMALIZATION_NOTE.into(),
        caveat: CHIRALITY_CAVEAT.into(),
    })
}
