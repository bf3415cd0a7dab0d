use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::data::{
    Dataset, Provenance, SceneSample, FEATURE_PREFIX, LABEL_COLUMNS, LABEL_MAX, LABEL_MIN, N_FEATURES,
    N_LABELS, TASK_FLAG_COLUMN,
};
use crate::error::{Error, Result};

/// Loads a header-named CSV. Feature columns start with `f_` (exactly 29,
/// including `f_within_circle`, which becomes feature 0; the rest keep file
/// order). The 8 label columns are looked up by name. Other columns are
/// ignored.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, Provenance::Real)
}

pub fn read_csv<R: Read>(reader: R, provenance: Provenance) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();

    let flag_idx = headers
        .iter()
        .position(|h| h == TASK_FLAG_COLUMN)
        .ok_or_else(|| Error::MissingColumn(TASK_FLAG_COLUMN.to_string()))?;
    let mut feature_cols = vec![flag_idx];
    feature_cols.extend(
        headers
            .iter()
            .enumerate()
            .filter(|(i, h)| *i != flag_idx && h.starts_with(FEATURE_PREFIX))
            .map(|(i, _)| i),
    );
    if feature_cols.len() != N_FEATURES {
        return Err(Error::invalid(
            "features",
            format!(
                "expected {N_FEATURES} `{FEATURE_PREFIX}` columns, found {}",
                feature_cols.len()
            ),
        ));
    }
    let label_cols = LABEL_COLUMNS
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;

    let feature_names = feature_cols.iter().map(|&i| headers[i].clone()).collect();
    let mut samples = Vec::new();
    for (row_idx, record) in rdr.records().enumerate() {
        let record = record?;
        let row = row_idx + 1;
        let cell = |col: usize| -> Result<f64> {
            let raw = record.get(col).ok_or_else(|| Error::Cell {
                row,
                column: headers[col].clone(),
                message: "missing cell".into(),
            })?;
            raw.trim().parse::<f64>().map_err(|_| Error::Cell {
                row,
                column: headers[col].clone(),
                message: format!("not a number: {raw:?}"),
            })
        };
        let mut features = [0.0; N_FEATURES];
        for (dst, &col) in features.iter_mut().zip(&feature_cols) {
            *dst = cell(col)?;
        }
        let mut labels = [0.0; N_LABELS];
        for (dst, &col) in labels.iter_mut().zip(&label_cols) {
            let v = cell(col)?;
            if !(LABEL_MIN..=LABEL_MAX).contains(&v) {
                return Err(Error::Cell {
                    row,
                    column: headers[col].clone(),
                    message: format!("label {v} outside [{LABEL_MIN}, {LABEL_MAX}]"),
                });
            }
            *dst = v;
        }
        samples.push(SceneSample { features, labels });
    }
    Ok(Dataset::new(samples, provenance, feature_names))
}

/// Writes features (indicator first) then labels, with full round-trip
/// precision.
pub fn write_csv<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let header: Vec<&str> = ds
        .feature_names
        .iter()
        .map(String::as_str)
        .chain(LABEL_COLUMNS.iter().copied())
        .collect();
    wtr.write_record(&header)?;
    for s in &ds.samples {
        let row: Vec<String> = s.features.iter().chain(&s.labels).map(|v| format!("{v:?}")).collect();
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}
