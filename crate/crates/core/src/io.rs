//! File formats: labeled CSV datasets, the JSON model file, and result tables.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::classifier::LinearClassifier;
use crate::error::{Error, Result};
use crate::prior::{batch_fit, estimate_all, DiscretePrior, EtaEstimate, Method};
use crate::sim::ResultTable;
use crate::summary::{summarize, ClassLabel, LabeledDataset, SummaryStats};
use crate::vb::VbConfig;

/// Features and (optionally) labels read from a CSV file.
#[derive(Debug, Clone)]
pub struct FeatureTable {
    pub names: Vec<String>,
    pub features: Array2<f64>,
    pub labels: Option<Vec<ClassLabel>>,
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

/// Reads a comma-separated table with a header row. Every column except
/// `label_column` must be numeric. If `label_column` is `Some` it must be
/// present and hold the values 1 or 2; if `None`, a column literally named
/// `label` is dropped when present. Rows are numbered from 1 after the header.
pub fn read_feature_table(path: &Path, label_column: Option<&str>) -> Result<FeatureTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let label_idx = match label_column {
        Some(name) => Some(headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::InvalidInput(format!(
                "{}: label column '{name}' not found in header",
                path.display()
            ))
        })?),
        None => headers.iter().position(|h| h == "label"),
    };
    let names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != label_idx)
        .map(|(_, h)| h.clone())
        .collect();
    if names.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: no feature columns",
            path.display()
        )));
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut rows = 0usize;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                path: path.into(),
                row,
                column: String::new(),
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        for (i, field) in record.iter().enumerate() {
            if Some(i) == label_idx {
                let label = field
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.fract() == 0.0)
                    .and_then(|v| ClassLabel::from_int(v as i64))
                    .ok_or_else(|| Error::Parse {
                        path: path.into(),
                        row,
                        column: headers[i].clone(),
                        message: format!("label must be 1 or 2, got '{field}'"),
                    })?;
                labels.push(label);
            } else {
                let v: f64 = field.parse().map_err(|_| Error::Parse {
                    path: path.into(),
                    row,
                    column: headers[i].clone(),
                    message: format!("non-numeric value '{field}'"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        path: path.into(),
                        row,
                        column: headers[i].clone(),
                        message: format!("non-finite value '{field}'"),
                    });
                }
                values.push(v);
            }
        }
        rows += 1;
    }
    let features = Array2::from_shape_vec((rows, names.len()), values)
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(FeatureTable {
        names,
        features,
        labels: label_idx.map(|_| labels),
    })
}

/// Loads a labeled training set.
pub fn load_dataset(path: &Path, label_column: &str) -> Result<LabeledDataset> {
    let table = read_feature_table(path, Some(label_column))?;
    let labels = table.labels.expect("label column requested");
    LabeledDataset::new(table.features, labels)
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Serialized fitted classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_names: Option<Vec<String>>,
    pub n1: usize,
    pub n2: usize,
    pub mu_hat: Vec<f64>,
    pub var_hat: Vec<f64>,
    pub prior: DiscretePrior,
    pub eta: EtaEstimate,
    pub vb: VbConfig,
    pub folds: usize,
}

impl ModelFile {
    pub fn new(
        stats: &SummaryStats,
        prior: DiscretePrior,
        eta: EtaEstimate,
        vb: VbConfig,
        folds: usize,
    ) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            feature_names: None,
            n1: stats.n1,
            n2: stats.n2,
            mu_hat: stats.mu_hat.clone(),
            var_hat: stats.var_hat.clone(),
            prior,
            eta,
            vb,
            folds,
        }
    }

    /// Summarizes `data`, fits the prior in `folds` batches and applies `method`.
    pub fn fit(
        data: &LabeledDataset,
        method: Method,
        vb: &VbConfig,
        folds: usize,
        kappa: f64,
    ) -> Result<Self> {
        if method == Method::Oracle {
            return Err(Error::InvalidInput(
                "the oracle estimator needs the true support and cannot be fitted on data".into(),
            ));
        }
        let stats = summarize(data)?;
        if folds == 0 || folds > stats.p {
            return Err(Error::InvalidInput(format!(
                "batch count must be in 1..={}, got {folds}",
                stats.p
            )));
        }
        let prior = batch_fit(&stats.y, folds, vb)?;
        let eta = estimate_all(&stats.y, &[method], Some(&prior), kappa, None)?
            .pop()
            .expect("one method requested");
        Ok(Self::new(&stats, prior, eta, *vb, folds))
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported model format version {}",
                self.format_version
            )));
        }
        let p = self.mu_hat.len();
        for (what, len) in [
            ("var_hat", self.var_hat.len()),
            ("eta.values", self.eta.values.len()),
            ("eta.zero_weight", self.eta.zero_weight.len()),
        ] {
            if len != p {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: p,
                    found: len,
                });
            }
        }
        if let Some(names) = &self.feature_names {
            if names.len() != p {
                return Err(Error::DimensionMismatch {
                    what: "feature_names",
                    expected: p,
                    found: names.len(),
                });
            }
        }
        self.prior.validate()?;
        self.vb.validate()
    }

    pub fn classifier(&self) -> Result<LinearClassifier> {
        LinearClassifier::new(self.mu_hat.clone(), &self.var_hat, self.eta.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: ModelFile = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(Some(path), &(self.to_json()? + "\n"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut text = String::new();
        open(path)?
            .read_to_string(&mut text)
            .map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// One predicted row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prediction {
    pub row: usize,
    pub score: f64,
    pub label: u8,
}

/// Aggregated row of a results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub cell: String,
    pub method: String,
    pub mean_error: f64,
    pub reps: usize,
    pub seed: u64,
}

/// Per-repetition row of the companion long-format CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub cell: String,
    pub method: String,
    pub rep: usize,
    pub error: f64,
}

pub fn summary_records(table: &ResultTable) -> Vec<SummaryRecord> {
    table
        .rows
        .iter()
        .map(|r| SummaryRecord {
            cell: r.cell.clone(),
            method: r.method.name().to_owned(),
            mean_error: r.mean_error,
            reps: r.reps(),
            seed: table.seed,
        })
        .collect()
}

pub fn rep_records(table: &ResultTable) -> Vec<RepRecord> {
    table
        .rows
        .iter()
        .flat_map(|r| {
            r.errors
                .iter()
                .enumerate()
                .map(move |(rep, &error)| RepRecord {
                    cell: r.cell.clone(),
                    method: r.method.name().to_owned(),
                    rep,
                    error,
                })
        })
        .collect()
}

fn records_csv<T: Serialize>(records: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Aggregated results as CSV text with columns `cell,method,mean_error,reps,seed`.
pub fn results_csv(table: &ResultTable) -> Result<String> {
    records_csv(&summary_records(table))
}

/// Per-repetition errors as CSV text with columns `cell,method,rep,error`.
pub fn rep_csv(table: &ResultTable) -> Result<String> {
    records_csv(&rep_records(table))
}

pub fn predictions_csv(predictions: &[Prediction]) -> Result<String> {
    records_csv(predictions)
}

/// Writes `text` to `path`, or to stdout when `path` is `None`.
pub fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::io(path, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

pub fn read_results_csv(path: &Path) -> Result<Vec<SummaryRecord>> {
    let mut reader = csv::Reader::from_reader(open(path)?);
    reader
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// Output layout of the `report` command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

/// Pivot of summary records: one row per cell, one column per method, in
/// order of first appearance.
pub fn format_report(records: &[SummaryRecord], format: ReportFormat) -> String {
    let mut cells: Vec<&str> = Vec::new();
    let mut methods: Vec<&str> = Vec::new();
    for r in records {
        if !cells.contains(&r.cell.as_str()) {
            cells.push(&r.cell);
        }
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let lookup = |cell: &str, method: &str| {
        records
            .iter()
            .find(|r| r.cell == cell && r.method == method)
            .map(|r| format!("{:.4}", r.mean_error))
            .unwrap_or_default()
    };
    let mut table: Vec<Vec<String>> = vec![std::iter::once("cell")
        .chain(methods.iter().copied())
        .map(str::to_owned)
        .collect()];
    for cell in &cells {
        let mut row = vec![(*cell).to_owned()];
        row.extend(methods.iter().map(|m| lookup(cell, m)));
        table.push(row);
    }

    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for row in &table {
                w.write_record(row).expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
        }
        ReportFormat::Markdown => {
            let widths: Vec<usize> = (0..table[0].len())
                .map(|c| {
                    table
                        .iter()
                        .map(|r| r[c].chars().count())
                        .max()
                        .unwrap_or(0)
                        .max(3)
                })
                .collect();
            let line = |row: &[String]| {
                let cols: Vec<String> = row
                    .iter()
                    .zip(&widths)
                    .map(|(s, w)| format!("{s:<w$}"))
                    .collect();
                format!("| {} |\n", cols.join(" | "))
            };
            let mut out = line(&table[0]);
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            out.push_str(&format!("| {} |\n", rule.join(" | ")));
            for row in &table[1..] {
                out.push_str(&line(row));
            }
            out
        }
    }
}
