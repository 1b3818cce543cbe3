//! CSV datasets: one SMILES column plus one column per task.

use std::path::Path;

use log::{info, warn};
use thiserror::Error;

use crate::chem::parse;
use crate::diff::Tensor;
use crate::model::TaskType;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("no 'smiles' column in {0}")]
    MissingSmilesColumn(String),
    #[error("no usable rows in {0}")]
    EmptyDataset(String),
    #[error("{path}: no label columns")]
    NoTasks { path: String },
    #[error("row {row}, column '{column}': bad label '{value}'")]
    BadLabel { row: usize, column: String, value: String },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetTable {
    pub smiles: Vec<String>,
    /// `n x tasks`; masked cells hold 0.
    pub labels: Tensor,
    /// `n x tasks` with 1 where a label is present, 0 where the cell was blank.
    pub mask: Tensor,
    pub task_names: Vec<String>,
    pub task_type: TaskType,
    pub rows_in: usize,
    pub rows_dropped: usize,
}

impl DatasetTable {
    pub fn len(&self) -> usize {
        self.smiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.smiles.is_empty()
    }

    pub fn num_tasks(&self) -> usize {
        self.task_names.len()
    }

    /// Rows restricted to `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> DatasetTable {
        let t = self.num_tasks();
        let mut labels = Vec::with_capacity(indices.len() * t);
        let mut mask = Vec::with_capacity(indices.len() * t);
        for &i in indices {
            labels.extend_from_slice(self.labels.row(i));
            mask.extend_from_slice(self.mask.row(i));
        }
        DatasetTable {
            smiles: indices.iter().map(|&i| self.smiles[i].clone()).collect(),
            labels: Tensor::new(indices.len(), t, labels).expect("row width"),
            mask: Tensor::new(indices.len(), t, mask).expect("row width"),
            task_names: self.task_names.clone(),
            task_type: self.task_type,
            rows_in: indices.len(),
            rows_dropped: 0,
        }
    }
}

/// Reads a header-first, comma-separated UTF-8 file. The SMILES column is
/// found by case-insensitive name; every other column is a task. Rows whose
/// SMILES fail to parse are dropped and counted. When `task_type` is `None`
/// it is inferred: classification if every present label is 0 or 1.
pub fn load_csv(path: &Path, task_type: Option<TaskType>) -> Result<DatasetTable, DataError> {
    let shown = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let smiles_col = headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case("smiles"))
        .ok_or_else(|| DataError::MissingSmilesColumn(shown.clone()))?;
    let task_cols: Vec<usize> = (0..headers.len()).filter(|&c| c != smiles_col).collect();
    if task_cols.is_empty() {
        return Err(DataError::NoTasks { path: shown });
    }

    let mut smiles = Vec::new();
    let mut raw: Vec<Option<f64>> = Vec::new();
    let (mut rows_in, mut rows_dropped) = (0usize, 0usize);
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        rows_in += 1;
        let s = record.get(smiles_col).unwrap_or("").trim();
        if let Err(e) = parse(s) {
            warn!("dropping row {} ('{}'): {}", r + 1, s, e);
            rows_dropped += 1;
            continue;
        }
        for &c in &task_cols {
            let cell = record.get(c).unwrap_or("").trim();
            if cell.is_empty() {
                raw.push(None);
            } else {
                let v: f64 = cell.parse().map_err(|_| DataError::BadLabel {
                    row: r + 1,
                    column: headers[c].clone(),
                    value: cell.to_string(),
                })?;
                if !v.is_finite() {
                    return Err(DataError::BadLabel { row: r + 1, column: headers[c].clone(), value: cell.to_string() });
                }
                raw.push(Some(v));
            }
        }
        smiles.push(s.to_string());
    }
    if smiles.is_empty() {
        return Err(DataError::EmptyDataset(shown));
    }

    let binary = |v: f64| v == 0.0 || v == 1.0;
    let task_type = task_type.unwrap_or(if raw.iter().flatten().all(|&v| binary(v)) {
        TaskType::Classification
    } else {
        TaskType::Regression
    });
    let t = task_cols.len();
    if task_type == TaskType::Classification {
        if let Some(k) = raw.iter().position(|v| v.is_some_and(|v| !binary(v))) {
            return Err(DataError::BadLabel {
                row: k / t + 1,
                column: headers[task_cols[k % t]].clone(),
                value: raw[k].map(|v| v.to_string()).unwrap_or_default(),
            });
        }
    }
    let n = smiles.len();
    let labels = Tensor::new(n, t, raw.iter().map(|v| v.unwrap_or(0.0)).collect()).expect("row width");
    let mask = Tensor::new(n, t, raw.iter().map(|v| if v.is_some() { 1.0 } else { 0.0 }).collect()).expect("row width");
    info!(
        "{}: rows_in={} rows_used={} rows_dropped={}",
        shown, rows_in, n, rows_dropped
    );
    Ok(DatasetTable {
        smiles,
        labels,
        mask,
        task_names: task_cols.iter().map(|&c| headers[c].clone()).collect(),
        task_type,
        rows_in,
        rows_dropped,
    })
}
