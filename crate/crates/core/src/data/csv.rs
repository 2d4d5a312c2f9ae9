//! Tabular datasets: header `label,f0,f1,...`, one example per row.

use std::path::Path;

use ndarray::Array2;

use super::Dataset;
use crate::error::{Error, Result};

fn table_err(source: &str, row: usize, col: usize, message: impl Into<String>) -> Error {
    Error::Table {
        source_name: source.to_string(),
        row,
        col,
        message: message.into(),
    }
}

/// Reads a CSV dataset. Rows are numbered from 1 (the header) in errors.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let source = path.display().to_string();
    let mut reader = ::csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            ::csv::ErrorKind::Io(io) => Error::io(path, io),
            other => table_err(&source, 0, 0, format!("{other:?}")),
        })?;
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| table_err(&source, 1, 0, e.to_string()))?,
        None => return Err(table_err(&source, 1, 0, "missing header")),
    };
    if header.get(0).map(str::trim) != Some("label") || header.len() < 2 {
        return Err(table_err(
            &source,
            1,
            0,
            "header must start with `label` followed by feature columns",
        ));
    }
    for (j, name) in header.iter().enumerate().skip(1) {
        if name.trim() != format!("f{}", j - 1) {
            return Err(table_err(
                &source,
                1,
                j,
                format!("expected column `f{}`, found `{name}`", j - 1),
            ));
        }
    }
    let dim = header.len() - 1;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in records.enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| table_err(&source, row, 0, e.to_string()))?;
        if rec.len() != dim + 1 {
            return Err(table_err(
                &source,
                row,
                rec.len(),
                format!("expected {} cells", dim + 1),
            ));
        }
        let label: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| table_err(&source, row, 0, format!("label `{}` is not a class index", &rec[0])))?;
        labels.push(label);
        for (j, cell) in rec.iter().enumerate().skip(1) {
            let v: f32 = cell
                .trim()
                .parse()
                .map_err(|_| table_err(&source, row, j, format!("`{cell}` is not numeric")))?;
            values.push(v);
        }
    }
    if labels.is_empty() {
        return Err(table_err(&source, 2, 0, "no data rows"));
    }
    let n = labels.len();
    let num_classes = labels.iter().max().map_or(1, |&m| m + 1);
    let inputs = Array2::from_shape_vec((n, dim), values).expect("row lengths checked");
    Dataset::new(inputs, labels, num_classes, None)
}

pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e: ::csv::Error| match e.into_kind() {
        ::csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{other:?}")),
    };
    let mut w = ::csv::Writer::from_path(path).map_err(io)?;
    let mut header = vec!["label".to_string()];
    header.extend((0..ds.dim()).map(|j| format!("f{j}")));
    w.write_record(&header).map_err(io)?;
    for (row, &y) in ds.inputs.rows().into_iter().zip(&ds.labels) {
        let mut rec = vec![y.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
