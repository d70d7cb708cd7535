use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Feature matrix with optional responses and optional predictor outputs.
///
/// Values are frozen after construction; the `with_*` builders return a new
/// dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: DMatrix<f64>,
    labels: Option<DVector<f64>>,
    predictions: Option<DVector<f64>>,
    provenance: Option<String>,
}

impl Dataset {
    pub fn new(features: DMatrix<f64>) -> Self {
        Self {
            features,
            labels: None,
            predictions: None,
            provenance: None,
        }
    }

    /// Build from row vectors; all rows must share one length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::input("rows have inconsistent lengths"));
        }
        Ok(Self::new(DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j])))
    }

    pub fn with_labels(mut self, labels: DVector<f64>) -> Result<Self> {
        self.check_len(labels.len(), "labels")?;
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_predictions(mut self, predictions: DVector<f64>) -> Result<Self> {
        self.check_len(predictions.len(), "predictions")?;
        self.predictions = Some(predictions);
        Ok(self)
    }

    pub fn with_provenance(mut self, tag: impl Into<String>) -> Self {
        self.provenance = Some(tag.into());
        self
    }

    fn check_len(&self, len: usize, what: &str) -> Result<()> {
        if len != self.len() {
            return Err(Error::input(format!(
                "{what} has length {len} but the dataset has {} rows",
                self.len()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> Option<&DVector<f64>> {
        self.labels.as_ref()
    }

    pub fn predictions(&self) -> Option<&DVector<f64>> {
        self.predictions.as_ref()
    }

    pub fn provenance(&self) -> Option<&str> {
        self.provenance.as_deref()
    }

    pub fn require_labels(&self) -> Result<&DVector<f64>> {
        self.labels
            .as_ref()
            .ok_or_else(|| Error::input("dataset has no labels"))
    }

    pub fn require_predictions(&self) -> Result<&DVector<f64>> {
        self.predictions
            .as_ref()
            .ok_or_else(|| Error::input("dataset has no predictions"))
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.features.row(i).iter().copied().collect()
    }

    /// New dataset made of the given rows (repeats allowed), keeping every
    /// present column aligned.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let p = self.dim();
        let mut features = DMatrix::zeros(rows.len(), p);
        for j in 0..p {
            let src = self.features.column(j);
            let mut dst = features.column_mut(j);
            for (k, &i) in rows.iter().enumerate() {
                dst[k] = src[i];
            }
        }
        let pick = |v: &DVector<f64>| DVector::from_iterator(rows.len(), rows.iter().map(|&i| v[i]));
        Dataset {
            features,
            labels: self.labels.as_ref().map(pick),
            predictions: self.predictions.as_ref().map(pick),
            provenance: self.provenance.clone(),
        }
    }

    /// Copy with the label column removed, e.g. to use a generated pool as
    /// unlabeled data.
    pub fn without_labels(&self) -> Dataset {
        Dataset {
            labels: None,
            ..self.clone()
        }
    }

    /// Same features with every label and prediction mapped through `f`.
    pub fn map_responses(&self, f: impl Fn(f64) -> f64) -> Dataset {
        Dataset {
            features: self.features.clone(),
            labels: self.labels.as_ref().map(|v| v.map(&f)),
            predictions: self.predictions.as_ref().map(|v| v.map(&f)),
            provenance: self.provenance.clone(),
        }
    }

    /// Same responses with every feature row shifted by `offset`.
    pub fn translate(&self, offset: &[f64]) -> Dataset {
        let mut features = self.features.clone();
        for (j, mut col) in features.column_iter_mut().enumerate() {
            col.add_scalar_mut(offset[j]);
        }
        Dataset {
            features,
            ..self.clone()
        }
    }
}
