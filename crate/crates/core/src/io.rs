//! File formats: labelled CSV matrices, prediction and embedding tables, a
//! compact binary embedding format, and loss configuration JSON.
//!
//! Every reader has a `parse_*` twin taking the text and an origin path used
//! only for error messages.

use std::path::Path;

use serde::de::DeserializeOwned;

use crate::embedding::{EmbeddingRecord, LabeledEmbeddings};
use crate::error::{Error, Result};
use crate::losses::{LossConfig, MiniBatch};
use crate::matrix::Matrix;
use crate::stats::{ConfusionMatrix, Prediction};
use crate::taxonomy::Taxonomy;
use crate::topo_metric::DistanceMatrix;

pub const TDEM_MAGIC: &[u8; 4] = b"TDEM";

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn csv_error(origin: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    let message = match e.kind() {
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
            format!("row has {len} fields, expected {expected_len}")
        }
        csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
        _ => e.to_string(),
    };
    Error::parse(origin, line, message)
}

/// All records including the header, each with its 1-based line number.
fn raw_records(text: &str, origin: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(origin, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        out.push((line, rec.iter().map(str::to_string).collect()));
    }
    if out.is_empty() {
        return Err(Error::file(origin, "file is empty"));
    }
    Ok(out)
}

fn typed_records<T: DeserializeOwned>(text: &str, origin: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    rdr.deserialize()
        .map(|r| r.map_err(|e| csv_error(origin, e)))
        .collect()
}

fn parse_number<T: std::str::FromStr>(s: &str, origin: &Path, line: usize, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::parse(origin, line, format!("invalid {what} `{s}`")))
}

/// Header `,L1,...,LK` followed by `Li,v_i1,...,v_iK`.
fn parse_labelled_square<T: std::str::FromStr>(
    text: &str,
    origin: &Path,
    what: &str,
) -> Result<(Vec<String>, Vec<Vec<T>>)> {
    let records = raw_records(text, origin)?;
    let (header_line, header) = &records[0];
    let cols: Vec<String> = header[1..].to_vec();
    if cols.is_empty() {
        return Err(Error::parse(origin, *header_line, "header has no column labels"));
    }
    let k = cols.len();
    let mut rows = Vec::with_capacity(k);
    let mut values = Vec::with_capacity(k);
    for (line, rec) in &records[1..] {
        if rec.len() != k + 1 {
            return Err(Error::parse(
                origin,
                *line,
                format!("row has {} fields, expected {}", rec.len(), k + 1),
            ));
        }
        rows.push(rec[0].clone());
        values.push(
            rec[1..]
                .iter()
                .map(|s| parse_number(s, origin, *line, what))
                .collect::<Result<Vec<T>>>()?,
        );
    }
    if rows.len() != k {
        return Err(Error::file(
            origin,
            format!("expected {k} data rows to match the header, found {}", rows.len()),
        ));
    }
    if rows != cols {
        return Err(Error::file(
            origin,
            format!(
                "column labels [{}] do not match row labels [{}]",
                cols.join(", "),
                rows.join(", ")
            ),
        ));
    }
    Ok((rows, values))
}

fn write_labelled_square(labels: &[String], cell: impl Fn(usize, usize) -> String) -> String {
    let mut out = String::new();
    for l in labels {
        out.push(',');
        out.push_str(l);
    }
    out.push('\n');
    for (i, l) in labels.iter().enumerate() {
        out.push_str(l);
        for j in 0..labels.len() {
            out.push(',');
            out.push_str(&cell(i, j));
        }
        out.push('\n');
    }
    out
}

pub fn parse_distance_csv(text: &str, origin: &Path) -> Result<DistanceMatrix> {
    let (labels, rows) = parse_labelled_square::<f64>(text, origin, "distance")?;
    let m = Matrix::from_rows(&rows)?;
    DistanceMatrix::new(labels, m).map_err(|e| Error::file(origin, e.to_string()))
}

pub fn read_distance_csv(path: &Path) -> Result<DistanceMatrix> {
    parse_distance_csv(&read_text(path)?, path)
}

/// Values are written in shortest round-trip form.
pub fn distance_to_csv(d: &DistanceMatrix) -> String {
    write_labelled_square(d.labels(), |i, j| format!("{}", d.get(i, j)))
}

pub fn parse_confusion_csv(text: &str, origin: &Path) -> Result<ConfusionMatrix> {
    let (labels, counts) = parse_labelled_square::<u64>(text, origin, "count")?;
    ConfusionMatrix::new(labels, counts)
}

pub fn read_confusion_csv(path: &Path) -> Result<ConfusionMatrix> {
    parse_confusion_csv(&read_text(path)?, path)
}

pub fn confusion_to_csv(cm: &ConfusionMatrix) -> String {
    write_labelled_square(cm.labels(), |i, j| cm.counts()[i][j].to_string())
}

/// Columns `sample_id,true_label,predicted_label`.
pub fn parse_predictions_csv(text: &str, origin: &Path) -> Result<Vec<Prediction>> {
    let preds: Vec<Prediction> = typed_records(text, origin)?;
    if preds.is_empty() {
        return Err(Error::file(origin, "no predictions"));
    }
    Ok(preds)
}

pub fn read_predictions_csv(path: &Path) -> Result<Vec<Prediction>> {
    parse_predictions_csv(&read_text(path)?, path)
}

/// Header `sample_id,label,e_0,...,e_{E-1}`.
pub fn parse_embeddings_csv(text: &str, origin: &Path) -> Result<LabeledEmbeddings> {
    let records = raw_records(text, origin)?;
    let (header_line, header) = &records[0];
    if header.len() < 3 || header[0] != "sample_id" || header[1] != "label" {
        return Err(Error::parse(
            origin,
            *header_line,
            "header must start with `sample_id,label` followed by at least one component",
        ));
    }
    let width = header.len();
    let mut out = Vec::with_capacity(records.len() - 1);
    for (line, rec) in &records[1..] {
        if rec.len() != width {
            return Err(Error::parse(
                origin,
                *line,
                format!("row has {} fields, expected {width}", rec.len()),
            ));
        }
        let vector = rec[2..]
            .iter()
            .map(|s| parse_number::<f32>(s, origin, *line, "component"))
            .collect::<Result<Vec<f32>>>()?;
        out.push(EmbeddingRecord {
            sample_id: rec[0].clone(),
            label: rec[1].clone(),
            vector,
        });
    }
    LabeledEmbeddings::new(out).map_err(|e| Error::file(origin, e.to_string()))
}

pub fn read_embeddings_csv(path: &Path) -> Result<LabeledEmbeddings> {
    parse_embeddings_csv(&read_text(path)?, path)
}

pub fn embeddings_to_csv(emb: &LabeledEmbeddings) -> String {
    let mut out = String::from("sample_id,label");
    for k in 0..emb.dim() {
        out.push_str(&format!(",e_{k}"));
    }
    out.push('\n');
    for r in emb.records() {
        out.push_str(&r.sample_id);
        out.push(',');
        out.push_str(&r.label);
        for v in &r.vector {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// Binary layout, little endian: magic `TDEM`, `u32` record count, `u32`
/// dimension, then per record a `u32` id length, UTF-8 id bytes, a `u16`
/// label index into the taxonomy and the components as `f32`.
pub fn embeddings_to_tdem(emb: &LabeledEmbeddings, tax: &Taxonomy) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(TDEM_MAGIC);
    out.extend_from_slice(&u32::try_from(emb.len()).map_err(|_| too_large())?.to_le_bytes());
    out.extend_from_slice(&u32::try_from(emb.dim()).map_err(|_| too_large())?.to_le_bytes());
    for r in emb.records() {
        let id = r.sample_id.as_bytes();
        out.extend_from_slice(&u32::try_from(id.len()).map_err(|_| too_large())?.to_le_bytes());
        out.extend_from_slice(id);
        let idx = tax.require_index(&r.label)?;
        out.extend_from_slice(&u16::try_from(idx).map_err(|_| too_large())?.to_le_bytes());
        for v in &r.vector {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn too_large() -> Error {
    Error::InvalidArgument("embedding set too large for the binary format".into())
}

struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> ByteCursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::file(self.origin, format!("truncated binary data at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn parse_tdem(bytes: &[u8], tax: &Taxonomy, origin: &Path) -> Result<LabeledEmbeddings> {
    let mut cur = ByteCursor { bytes, pos: 0, origin };
    if cur.take(4)? != TDEM_MAGIC {
        return Err(Error::file(origin, "missing TDEM magic"));
    }
    let n = cur.u32()? as usize;
    let dim = cur.u32()? as usize;
    let classes = tax.classes();
    let mut records = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let len = cur.u32()? as usize;
        let sample_id = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| Error::file(origin, "sample id is not valid UTF-8"))?
            .to_string();
        let idx = cur.u16()? as usize;
        let label = classes
            .get(idx)
            .ok_or_else(|| Error::file(origin, format!("label index {idx} outside the taxonomy")))?
            .code
            .clone();
        let vector = (0..dim).map(|_| cur.f32()).collect::<Result<Vec<f32>>>()?;
        records.push(EmbeddingRecord { sample_id, label, vector });
    }
    if cur.pos != bytes.len() {
        return Err(Error::file(origin, format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    LabeledEmbeddings::new(records).map_err(|e| Error::file(origin, e.to_string()))
}

/// Dispatches on the `TDEM` magic; anything else is read as CSV.
pub fn read_embeddings(path: &Path, tax: &Taxonomy) -> Result<LabeledEmbeddings> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(TDEM_MAGIC) {
        parse_tdem(&bytes, tax, path)
    } else {
        let text = String::from_utf8(bytes).map_err(|_| Error::file(path, "not UTF-8 text"))?;
        parse_embeddings_csv(&text, path)
    }
}

/// Header `label,e_0,...`; labels are class indices or codes from `labels`.
pub fn parse_minibatch_csv(text: &str, origin: &Path, labels: &[String]) -> Result<MiniBatch> {
    let records = raw_records(text, origin)?;
    let (header_line, header) = &records[0];
    if header.len() < 2 || header[0] != "label" {
        return Err(Error::parse(origin, *header_line, "header must be `label,e_0,...`"));
    }
    let width = header.len();
    let mut rows = Vec::new();
    let mut ys = Vec::new();
    for (line, rec) in &records[1..] {
        if rec.len() != width {
            return Err(Error::parse(
                origin,
                *line,
                format!("row has {} fields, expected {width}", rec.len()),
            ));
        }
        let y = match rec[0].parse::<usize>() {
            Ok(i) => i,
            Err(_) => labels
                .iter()
                .position(|l| *l == rec[0])
                .ok_or_else(|| Error::parse(origin, *line, format!("unknown label `{}`", rec[0])))?,
        };
        ys.push(y);
        rows.push(
            rec[1..]
                .iter()
                .map(|s| parse_number::<f64>(s, origin, *line, "component"))
                .collect::<Result<Vec<f64>>>()?,
        );
    }
    if rows.is_empty() {
        return Err(Error::file(origin, "mini-batch has no rows"));
    }
    MiniBatch::new(Matrix::from_rows(&rows)?, ys).map_err(|e| Error::file(origin, e.to_string()))
}

pub fn read_minibatch_csv(path: &Path, labels: &[String]) -> Result<MiniBatch> {
    parse_minibatch_csv(&read_text(path)?, path, labels)
}

pub fn parse_loss_config(text: &str, origin: &Path) -> Result<LossConfig> {
    let cfg: LossConfig = serde_json::from_str(text).map_err(|e| Error::parse(origin, e.line(), e.to_string()))?;
    cfg.validate().map_err(|e| Error::file(origin, e.to_string()))?;
    Ok(cfg)
}

pub fn read_loss_config(path: &Path) -> Result<LossConfig> {
    parse_loss_config(&read_text(path)?, path)
}

pub(crate) fn parse_csv_rows<T: DeserializeOwned>(text: &str, origin: &Path) -> Result<Vec<T>> {
    typed_records(text, origin)
}
