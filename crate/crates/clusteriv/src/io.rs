//! CSV ingestion.
//!
//! Input is RFC-4180 CSV with a mandatory header row. Outcome and covariates
//! must be numeric; treatment and instrument must be 0 or 1 (written either
//! as `0`/`1` or as numbers equal to them). A field is *missing* when it is
//! empty or one of `NA`, `NaN`, `.`. Clusters are numbered in order of first
//! appearance of their labels.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use clusteriv_core::{ClusterIndex, Dataset, Matrix};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    /// Refuse any missing value.
    #[default]
    #[value(name = "error")]
    Error,
    /// Drop rows with a missing value in any used column.
    #[value(name = "drop_row")]
    DropRow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputSpec {
    pub path: PathBuf,
    pub outcome_col: String,
    pub treatment_col: String,
    pub instrument_col: String,
    pub cluster_col: String,
    pub covariate_cols: Vec<String>,
    pub missing_policy: MissingPolicy,
}

impl InputSpec {
    pub fn new(path: impl Into<PathBuf>, outcome: &str, treatment: &str, instrument: &str, cluster: &str) -> Self {
        InputSpec {
            path: path.into(),
            outcome_col: outcome.into(),
            treatment_col: treatment.into(),
            instrument_col: instrument.into(),
            cluster_col: cluster.into(),
            covariate_cols: Vec::new(),
            missing_policy: MissingPolicy::Error,
        }
    }

    fn columns(&self) -> Vec<&str> {
        let mut v = vec![
            self.outcome_col.as_str(),
            self.treatment_col.as_str(),
            self.instrument_col.as_str(),
            self.cluster_col.as_str(),
        ];
        v.extend(self.covariate_cols.iter().map(String::as_str));
        v
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error at line {line}, column '{column}': {reason}")]
    ParseError { line: u64, column: String, reason: String },
    #[error("column '{column}' must be 0 or 1; line {line} has '{value}'")]
    NonBinaryColumn { column: String, line: u64, value: String },
    #[error("missing value in column '{column}' at line {line}")]
    MissingValue { column: String, line: u64 },
    #[error("column '{0}' not found in header")]
    MissingColumn(String),
    #[error("column '{0}' is used more than once")]
    DuplicateColumn(String),
    #[error(transparent)]
    Core(#[from] clusteriv_core::Error),
}

/// A dataset together with what happened while reading it.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub dataset: Dataset,
    pub rows_read: usize,
    pub rows_dropped: usize,
}

fn is_missing(field: &str) -> bool {
    matches!(field, "" | "NA" | "NaN" | "nan" | ".")
}

fn parse_number(field: &str, column: &str, line: u64) -> Result<f64, IoError> {
    let v: f64 = field.parse().map_err(|_| IoError::ParseError {
        line,
        column: column.into(),
        reason: format!("'{field}' is not a number"),
    })?;
    if !v.is_finite() {
        return Err(IoError::ParseError { line, column: column.into(), reason: format!("'{field}' is not finite") });
    }
    Ok(v)
}

fn parse_binary(field: &str, column: &str, line: u64) -> Result<f64, IoError> {
    match field.parse::<f64>() {
        Ok(v) if v == 0.0 || v == 1.0 => Ok(v),
        _ => Err(IoError::NonBinaryColumn { column: column.into(), line, value: field.into() }),
    }
}

pub fn load_csv(spec: &InputSpec) -> Result<Loaded, IoError> {
    let file = File::open(&spec.path).map_err(|source| IoError::Io { path: spec.path.clone(), source })?;
    load_csv_from_reader(file, spec)
}

/// Same as [`load_csv`], reading from any source (`spec.path` is ignored).
pub fn load_csv_from_reader<R: Read>(reader: R, spec: &InputSpec) -> Result<Loaded, IoError> {
    let cols = spec.columns();
    for (k, c) in cols.iter().enumerate() {
        if cols[..k].contains(c) {
            return Err(IoError::DuplicateColumn((*c).into()));
        }
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| csv_error(e, "<header>"))?.clone();
    let pos: Vec<usize> = cols
        .iter()
        .map(|c| header.iter().position(|h| h.trim() == *c).ok_or_else(|| IoError::MissingColumn((*c).into())))
        .collect::<Result<_, _>>()?;

    let k = spec.covariate_cols.len();
    let (mut y, mut d, mut z, mut labels) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut x: Vec<Vec<f64>> = vec![Vec::new(); k];
    let (mut rows_read, mut rows_dropped) = (0, 0);
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(e, "<record>"))?;
        rows_read += 1;
        let line = rec.position().map_or(0, |p| p.line());
        let fields: Vec<&str> = pos.iter().map(|&p| rec.get(p).unwrap_or("").trim()).collect();
        if let Some(j) = fields.iter().position(|f| is_missing(f)) {
            match spec.missing_policy {
                MissingPolicy::Error => return Err(IoError::MissingValue { column: cols[j].into(), line }),
                MissingPolicy::DropRow => {
                    rows_dropped += 1;
                    continue;
                }
            }
        }
        y.push(parse_number(fields[0], cols[0], line)?);
        d.push(parse_binary(fields[1], cols[1], line)?);
        z.push(parse_binary(fields[2], cols[2], line)?);
        labels.push(fields[3].to_string());
        for j in 0..k {
            x[j].push(parse_number(fields[4 + j], cols[4 + j], line)?);
        }
    }
    let n = y.len();
    let idx = ClusterIndex::from_labels(&labels)?;
    let mut dataset = Dataset::new(y, d, z, idx)?;
    if k > 0 {
        let cols: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
        dataset = dataset.with_covariates(Matrix::from_columns(n, &cols)?, spec.covariate_cols.clone())?;
    }
    Ok(Loaded { dataset, rows_read, rows_dropped })
}

fn csv_error(e: csv::Error, column: &str) -> IoError {
    let line = e.position().map_or(0, |p| p.line());
    IoError::ParseError { line, column: column.into(), reason: e.to_string() }
}

/// Write rows of a CSV file with the given header.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), IoError> {
    let io = |source: std::io::Error| IoError::Io { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
    w.write_record(header).map_err(|e| io(e.into()))?;
    for r in rows {
        w.write_record(r).map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)
}
