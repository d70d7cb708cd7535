use std::fs::File;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

pub const BUNDLE_SCHEMA_VERSION: u32 = 1;

/// Declared column layout of a CSV file. Nothing is inferred.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub features: Vec<String>,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub prediction: Option<String>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
}

fn default_delimiter() -> char {
    ','
}

impl CsvSchema {
    pub fn new(features: Vec<String>) -> Self {
        Self {
            features,
            label: None,
            prediction: None,
            delimiter: ',',
        }
    }

    pub fn with_label(mut self, name: impl Into<String>) -> Self {
        self.label = Some(name.into());
        self
    }

    pub fn with_prediction(mut self, name: impl Into<String>) -> Self {
        self.prediction = Some(name.into());
        self
    }

    fn delimiter_byte(&self) -> Result<u8> {
        u8::try_from(self.delimiter)
            .ok()
            .filter(u8::is_ascii)
            .ok_or_else(|| Error::input(format!("delimiter {:?} is not a single ASCII character", self.delimiter)))
    }
}

#[derive(Debug, Clone)]
pub struct LoadedCsv {
    pub dataset: Dataset,
    /// Rows skipped because a declared column held NaN or was empty.
    pub dropped_rows: usize,
}

/// Read the declared columns of a headed CSV file. Rows with an empty or NaN
/// cell in any declared column are dropped and counted; any other
/// non-numeric cell is a parse error located by 1-based file line and
/// column name.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<LoadedCsv> {
    if schema.features.is_empty() {
        return Err(Error::input("schema declares no feature columns"));
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter_byte()?)
        .has_headers(true)
        .from_reader(file);
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let locate = |name: &str| {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| Error::Parse {
            row: 1,
            column: name.to_string(),
            message: "column not present in header".into(),
        })
    };
    let mut columns: Vec<(String, usize)> = Vec::new();
    for name in schema.features.iter().chain(&schema.label).chain(&schema.prediction) {
        columns.push((name.clone(), locate(name)?));
    }

    let width = columns.len();
    let mut values: Vec<f64> = Vec::new();
    let mut dropped_rows = 0;
    for (k, record) in reader.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| csv_error(path, e))?;
        let mut row = Vec::with_capacity(width);
        let mut missing = false;
        for (name, idx) in &columns {
            let cell = record.get(*idx).unwrap_or("").trim();
            if cell.is_empty() {
                missing = true;
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: line,
                column: name.clone(),
                message: format!("not a number: {cell:?}"),
            })?;
            if v.is_nan() {
                missing = true;
            } else if v.is_infinite() {
                return Err(Error::Parse {
                    row: line,
                    column: name.clone(),
                    message: "infinite value".into(),
                });
            }
            row.push(v);
        }
        if missing {
            dropped_rows += 1;
        } else {
            values.extend(row);
        }
    }

    let n = values.len() / width;
    let p = schema.features.len();
    let all = DMatrix::from_row_slice(n, width, &values);
    let mut dataset = Dataset::new(all.columns(0, p).into_owned());
    let mut next = p;
    if schema.label.is_some() {
        dataset = dataset.with_labels(DVector::from_column_slice(all.column(next).as_slice()))?;
        next += 1;
    }
    if schema.prediction.is_some() {
        dataset = dataset.with_predictions(DVector::from_column_slice(all.column(next).as_slice()))?;
    }
    Ok(LoadedCsv { dataset, dropped_rows })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let row = e.position().map_or(0, |p| p.line() as usize);
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::Parse {
            row,
            column: String::new(),
            message: e.to_string(),
        }
    }
}

/// Write a dataset with the schema's column names (labels and predictions
/// only when both declared and present). Floats use the shortest
/// representation that parses back to the same value.
pub fn write_csv(path: &Path, dataset: &Dataset, schema: &CsvSchema) -> Result<()> {
    if schema.features.len() != dataset.dim() {
        return Err(Error::input(format!(
            "schema names {} features but the dataset has {}",
            schema.features.len(),
            dataset.dim()
        )));
    }
    let label = schema.label.as_ref().map(|n| dataset.require_labels().map(|v| (n, v))).transpose()?;
    let pred = schema
        .prediction
        .as_ref()
        .map(|n| dataset.require_predictions().map(|v| (n, v)))
        .transpose()?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .delimiter(schema.delimiter_byte()?)
        .from_writer(file);
    let mut header: Vec<&str> = schema.features.iter().map(String::as_str).collect();
    header.extend(label.iter().map(|(n, _)| n.as_str()));
    header.extend(pred.iter().map(|(n, _)| n.as_str()));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    let feats = dataset.features();
    for i in 0..dataset.len() {
        let mut rec: Vec<String> = feats.row(i).iter().map(f64::to_string).collect();
        rec.extend(label.iter().map(|(_, v)| v[i].to_string()));
        rec.extend(pred.iter().map(|(_, v)| v[i].to_string()));
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Small JSON file tying a labeled (and optionally unlabeled) CSV to one
/// schema and a provenance tag. Relative paths resolve against the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub schema_version: u32,
    pub provenance: String,
    pub schema: CsvSchema,
    pub labeled: PathBuf,
    #[serde(default)]
    pub unlabeled: Option<PathBuf>,
    /// Ground-truth file, present for simulated bundles.
    #[serde(default)]
    pub truth: Option<PathBuf>,
    /// Free-form description of how the data was produced.
    #[serde(default)]
    pub generator: Option<serde_json::Value>,
}

#[derive(Debug, Clone)]
pub struct LoadedBundle {
    pub manifest: BundleManifest,
    pub labeled: LoadedCsv,
    pub unlabeled: Option<LoadedCsv>,
}

pub fn load_bundle(manifest_path: &Path) -> Result<LoadedBundle> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: BundleManifest = serde_json::from_str(&text).map_err(|e| Error::Schema {
        field: "manifest".into(),
        message: e.to_string(),
    })?;
    if manifest.schema_version != BUNDLE_SCHEMA_VERSION {
        return Err(Error::Schema {
            field: "schema_version".into(),
            message: format!("expected {BUNDLE_SCHEMA_VERSION}, found {}", manifest.schema_version),
        });
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let load = |rel: &Path, schema: &CsvSchema| -> Result<LoadedCsv> {
        let mut loaded = load_csv(&base.join(rel), schema)?;
        loaded.dataset = loaded.dataset.with_provenance(manifest.provenance.clone());
        Ok(loaded)
    };
    let labeled = load(&manifest.labeled, &manifest.schema)?;
    // The unlabeled file never needs a label column.
    let unlabeled_schema = CsvSchema {
        label: None,
        ..manifest.schema.clone()
    };
    let unlabeled = manifest
        .unlabeled
        .as_deref()
        .map(|rel| load(rel, &unlabeled_schema))
        .transpose()?;
    Ok(LoadedBundle {
        manifest,
        labeled,
        unlabeled,
    })
}
