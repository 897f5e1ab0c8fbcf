//! Schema and label checks over a list of input files.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::io::{
    parse_confusion_csv, parse_distance_csv, parse_embeddings_csv, parse_loss_config, parse_minibatch_csv,
    parse_predictions_csv, parse_tdem, TDEM_MAGIC,
};
use crate::report::ReportConfig;
use crate::split::{parse_metadata_csv, validate_metadata};
use crate::taxonomy::{load_taxonomy, Taxonomy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputKind {
    Taxonomy,
    Distance,
    Confusion,
    Predictions,
    Embeddings,
    Metadata,
    MiniBatch,
    LossConfig,
    ReportConfig,
}

impl std::str::FromStr for InputKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::InvalidArgument(format!("unknown input kind `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileReport {
    pub path: PathBuf,
    pub kind: Option<InputKind>,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub files: Vec<FileReport>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.files.iter().all(|f| f.errors.is_empty())
    }

    pub fn errors(&self) -> Vec<String> {
        self.files
            .iter()
            .flat_map(|f| f.errors.iter().map(move |e| format!("{}: {e}", f.path.display())))
            .collect()
    }
}

/// Guesses the format from the content: the binary magic, JSON keys, or the
/// CSV header. A square labelled CSV of integers with a nonzero diagonal is a
/// confusion matrix, otherwise a distance matrix.
pub fn detect_kind(bytes: &[u8]) -> Option<InputKind> {
    if bytes.starts_with(TDEM_MAGIC) {
        return Some(InputKind::Embeddings);
    }
    let text = std::str::from_utf8(bytes).ok()?;
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') {
        let v: serde_json::Value = serde_json::from_str(trimmed).ok()?;
        let obj = v.as_object()?;
        return Some(if obj.contains_key("classes") {
            InputKind::Taxonomy
        } else if obj.contains_key("models") {
            InputKind::ReportConfig
        } else {
            InputKind::LossConfig
        });
    }
    let mut lines = trimmed.lines();
    let header: Vec<&str> = lines.next()?.split(',').map(str::trim).collect();
    match header.as_slice() {
        ["sample_id", "true_label", ..] => Some(InputKind::Predictions),
        ["sample_id", "label", ..] => Some(InputKind::Embeddings),
        ["path", "class_code", ..] => Some(InputKind::Metadata),
        ["label", ..] => Some(InputKind::MiniBatch),
        ["", ..] => {
            let mut integral = true;
            let mut diag = false;
            for (i, line) in lines.enumerate() {
                let cells: Vec<&str> = line.split(',').map(str::trim).skip(1).collect();
                integral &= cells.iter().all(|c| c.parse::<u64>().is_ok());
                diag |= cells.get(i).and_then(|c| c.parse::<u64>().ok()).is_some_and(|v| v > 0);
            }
            Some(if integral && diag {
                InputKind::Confusion
            } else {
                InputKind::Distance
            })
        }
        _ => None,
    }
}

fn unknown_labels<'a>(labels: impl IntoIterator<Item = &'a str>, tax: &Taxonomy) -> Vec<String> {
    let unknown: BTreeSet<&str> = labels.into_iter().filter(|l| tax.index_of(l).is_none()).collect();
    unknown
        .into_iter()
        .map(|l| format!("label `{l}` is not in the taxonomy"))
        .collect()
}

fn check_file(path: &Path, kind: Option<InputKind>, tax: &Taxonomy) -> FileReport {
    let mut report = FileReport {
        path: path.to_path_buf(),
        kind,
        errors: Vec::new(),
    };
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) => {
            report.errors.push(Error::io(path, e).to_string());
            return report;
        }
    };
    let Some(kind) = kind.or_else(|| detect_kind(&bytes)) else {
        report.errors.push("unrecognised file format".into());
        return report;
    };
    report.kind = Some(kind);
    let text = || String::from_utf8_lossy(&bytes).into_owned();
    let result: Result<Vec<String>, Error> = match kind {
        InputKind::Taxonomy => load_taxonomy(&text()).map(|_| Vec::new()),
        InputKind::Distance => parse_distance_csv(&text(), path)
            .map(|d| unknown_labels(d.labels().iter().map(String::as_str), tax)),
        InputKind::Confusion => parse_confusion_csv(&text(), path)
            .map(|c| unknown_labels(c.labels().iter().map(String::as_str), tax)),
        InputKind::Predictions => parse_predictions_csv(&text(), path).map(|p| {
            unknown_labels(
                p.iter()
                    .flat_map(|r| [r.true_label.as_str(), r.predicted_label.as_str()]),
                tax,
            )
        }),
        InputKind::Embeddings => {
            let emb = if bytes.starts_with(TDEM_MAGIC) {
                parse_tdem(&bytes, tax, path)
            } else {
                parse_embeddings_csv(&text(), path)
            };
            emb.map(|e| unknown_labels(e.records().iter().map(|r| r.label.as_str()), tax))
        }
        InputKind::Metadata => parse_metadata_csv(&text(), path)
            .and_then(|m| validate_metadata(&m, tax))
            .map(|_| Vec::new()),
        InputKind::MiniBatch => parse_minibatch_csv(&text(), path, &tax.codes()).map(|b| {
            b.labels()
                .iter()
                .filter(|&&y| y >= tax.len())
                .map(|y| format!("class index {y} outside the taxonomy"))
                .collect()
        }),
        InputKind::LossConfig => parse_loss_config(&text(), path).map(|_| Vec::new()),
        InputKind::ReportConfig => serde_json::from_str::<ReportConfig>(&text())
            .map_err(Error::from)
            .and_then(|c| c.validate())
            .map(|_| Vec::new()),
    };
    match result {
        Ok(errs) => report.errors.extend(errs),
        Err(e) => report.errors.push(e.to_string()),
    }
    report
}

/// Checks each file, with an optional explicit kind, against `tax`.
pub fn validate_inputs(paths: &[(Option<InputKind>, PathBuf)], tax: &Taxonomy) -> ValidationReport {
    ValidationReport {
        files: paths.iter().map(|(k, p)| check_file(p, *k, tax)).collect(),
    }
}
