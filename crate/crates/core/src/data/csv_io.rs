use std::collections::BTreeSet;
use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::Tensor;

fn csv_err(line: u64, message: impl Into<String>) -> Error {
    Error::Csv { line, message: message.into() }
}

fn from_csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => csv_err(line, format!("{other:?}")),
    }
}

/// Reads a headed, comma-separated numeric table. `label_column` names the
/// class column; its distinct values become classes `0..C` in numeric order
/// when all are integers, lexicographic order otherwise.
pub fn load_csv(path: &Path, label_column: &str) -> Result<LabeledDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(from_csv_error)?;
    let headers = reader.headers().map_err(from_csv_error)?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h.trim() == label_column)
        .ok_or_else(|| csv_err(1, format!("no column named `{label_column}`")))?;
    let feature_names: Vec<String> =
        headers.iter().enumerate().filter(|&(i, _)| i != label_idx).map(|(_, h)| h.trim().to_string()).collect();
    if feature_names.is_empty() {
        return Err(csv_err(1, "no feature columns"));
    }
    let mut data = Vec::new();
    let mut raw_labels = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(from_csv_error)?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != headers.len() {
            return Err(csv_err(line, format!("expected {} fields, found {}", headers.len(), rec.len())));
        }
        for (i, field) in rec.iter().enumerate() {
            if i == label_idx {
                raw_labels.push(field.trim().to_string());
                continue;
            }
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| csv_err(line, format!("column `{}`: `{field}` is not a number", headers[i].trim())))?;
            if !v.is_finite() {
                return Err(csv_err(line, format!("column `{}`: non-finite value", headers[i].trim())));
            }
            data.push(v);
        }
    }
    if raw_labels.is_empty() {
        return Err(csv_err(1, "no data rows"));
    }
    let distinct: BTreeSet<&str> = raw_labels.iter().map(String::as_str).collect();
    let mut class_names: Vec<String> = distinct.into_iter().map(str::to_string).collect();
    if class_names.iter().all(|c| c.parse::<i64>().is_ok()) {
        class_names.sort_by_key(|c| c.parse::<i64>().expect("checked"));
    }
    let labels = raw_labels.iter().map(|l| class_names.iter().position(|c| c == l).expect("present")).collect();
    let n = raw_labels.len();
    let name = path.file_stem().map_or_else(|| "csv".to_string(), |s| s.to_string_lossy().into_owned());
    let mut ds = LabeledDataset::new(name, Tensor::matrix(n, feature_names.len(), data)?, labels, class_names.len())?;
    ds.feature_names = feature_names;
    ds.class_names = class_names;
    Ok(ds)
}

/// Writes features in their stored units with a trailing `label` column of class names.
pub fn write_csv(ds: &LabeledDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(from_csv_error)?;
    let mut header = ds.feature_names.clone();
    header.push("label".into());
    w.write_record(&header).map_err(from_csv_error)?;
    for (row, &y) in ds.features.iter_rows().zip(&ds.labels) {
        let mut rec: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        rec.push(ds.class_names[y].clone());
        w.write_record(&rec).map_err(from_csv_error)?;
    }
    w.flush()?;
    Ok(())
}
