//! Stand-ins for the externally trained predictor `F`.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{load_csv, CsvSchema, Surface};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Ratio of prediction MSE to the label second moment above which the
/// quality report advises that PPI is unlikely to help. A heuristic only.
pub const UNHELPFUL_RATIO: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleFunction {
    #[default]
    Piecewise,
    Linear,
    Quadratic,
    /// Always predicts 0; a deliberately bad predictor.
    Zero,
}

impl OracleFunction {
    fn eval(self, x: &[f64]) -> f64 {
        match self {
            OracleFunction::Piecewise => Surface::Piecewise.value(x),
            OracleFunction::Linear => Surface::Linear.value(x),
            OracleFunction::Quadratic => Surface::Quadratic.value(x),
            OracleFunction::Zero => 0.0,
        }
    }
}

/// Serializable predictor configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictorRef {
    /// Single-column CSV with header `prediction`, rows aligned with the
    /// dataset it is applied to.
    FileBacked { path: PathBuf },
    /// Brute-force k-nearest-neighbour regression on a separate training set.
    Knn {
        k: usize,
        #[serde(default)]
        allow_shared_provenance: bool,
    },
    /// Simulation only: the true surface plus homoscedastic gaussian noise.
    NoisyOracle {
        sd: f64,
        #[serde(default)]
        function: OracleFunction,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Debug, Clone)]
pub struct KnnPredictor {
    k: usize,
    training: Dataset,
    allow_shared_provenance: bool,
}

impl KnnPredictor {
    pub fn new(k: usize, training: Dataset, allow_shared_provenance: bool) -> Result<Self> {
        if k == 0 {
            return Err(Error::input("knn needs k >= 1"));
        }
        training.require_labels()?;
        if training.len() < k {
            return Err(Error::input(format!(
                "knn training set has {} rows, fewer than k = {k}",
                training.len()
            )));
        }
        Ok(Self {
            k,
            training,
            allow_shared_provenance,
        })
    }

    /// Reject inference data that shares a provenance tag with the training
    /// set, unless the override is set.
    pub fn check_independence(&self, inference: &[&Dataset]) -> Result<()> {
        if self.allow_shared_provenance {
            return Ok(());
        }
        if let Some(tag) = self.training.provenance() {
            if inference.iter().any(|d| d.provenance() == Some(tag)) {
                return Err(Error::input(format!(
                    "knn training data shares provenance {tag:?} with the inference data; \
                     the predictor must be independent of it"
                )));
            }
        }
        Ok(())
    }

    fn predict_row(&self, x: &[f64]) -> f64 {
        let feats = self.training.features();
        let labels = self.training.labels().expect("checked at construction");
        let mut dist: Vec<(f64, usize)> = (0..feats.nrows())
            .map(|i| {
                let d: f64 = x.iter().enumerate().map(|(j, v)| (feats[(i, j)] - v).powi(2)).sum();
                (d, i)
            })
            .collect();
        dist.select_nth_unstable_by(self.k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        dist[..self.k].iter().map(|&(_, i)| labels[i]).sum::<f64>() / self.k as f64
    }
}

#[derive(Debug, Clone)]
pub enum Predictor {
    FileBacked { path: PathBuf, values: DVector<f64> },
    Knn(KnnPredictor),
    NoisyOracle { sd: f64, function: OracleFunction, seed: u64 },
}

impl Predictor {
    /// Build from configuration; `knn` needs a labeled training set.
    pub fn from_ref(spec: &PredictorRef, training: Option<Dataset>) -> Result<Self> {
        match spec {
            PredictorRef::FileBacked { path } => Self::from_file(path),
            PredictorRef::Knn {
                k,
                allow_shared_provenance,
            } => {
                let training = training.ok_or_else(|| Error::input("knn predictor needs a training dataset"))?;
                Ok(Predictor::Knn(KnnPredictor::new(*k, training, *allow_shared_provenance)?))
            }
            PredictorRef::NoisyOracle { sd, function, seed } => Self::noisy_oracle(*sd, *function, *seed),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let loaded = load_csv(path, &CsvSchema::new(vec!["prediction".into()]))?;
        if loaded.dropped_rows > 0 {
            return Err(Error::input(format!(
                "{} has {} missing predictions; rows must align with the dataset",
                path.display(),
                loaded.dropped_rows
            )));
        }
        let values = loaded.dataset.features().column(0).into_owned();
        Ok(Predictor::FileBacked {
            path: path.to_path_buf(),
            values,
        })
    }

    pub fn noisy_oracle(sd: f64, function: OracleFunction, seed: u64) -> Result<Self> {
        if !(sd >= 0.0) || !sd.is_finite() {
            return Err(Error::input(format!("oracle noise sd must be finite and nonnegative, got {sd}")));
        }
        Ok(Predictor::NoisyOracle { sd, function, seed })
    }

    /// `F(X_i)` for every row. Deterministic: the oracle's noise for a row is
    /// a function of the seed and the row's exact coordinates.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        let rows: Vec<Vec<f64>> = x.row_iter().map(|r| r.iter().copied().collect()).collect();
        match self {
            Predictor::FileBacked { path, values } => {
                if values.len() != x.nrows() {
                    return Err(Error::input(format!(
                        "{} holds {} predictions for {} rows",
                        path.display(),
                        values.len(),
                        x.nrows()
                    )));
                }
                Ok(values.clone())
            }
            Predictor::Knn(knn) => {
                if x.ncols() != knn.training.dim() {
                    return Err(Error::input("knn query dimension differs from the training data"));
                }
                let out: Vec<f64> = rows.par_iter().map(|r| knn.predict_row(r)).collect();
                Ok(DVector::from_vec(out))
            }
            Predictor::NoisyOracle { sd, function, seed } => {
                if *function != OracleFunction::Zero && x.ncols() != crate::data::SIM_DIM {
                    return Err(Error::input("the noisy oracle is only defined on the simulation covariates"));
                }
                let out = rows
                    .iter()
                    .map(|r| function.eval(r) + sd * row_noise(*seed, r))
                    .collect::<Vec<_>>();
                Ok(DVector::from_vec(out))
            }
        }
    }

    /// Copy of `data` with this predictor's outputs attached.
    pub fn attach(&self, data: &Dataset) -> Result<Dataset> {
        let preds = self.predict(data.features())?;
        data.clone().with_predictions(preds)
    }
}

fn row_noise(seed: u64, row: &[f64]) -> f64 {
    let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
    stream_rng(seed, &key).sample(StandardNormal)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub n: usize,
    pub mse_vs_labels: f64,
    pub ratio_to_label_second_moment: f64,
    /// Advisory only: ratio above [`UNHELPFUL_RATIO`].
    pub likely_unhelpful: bool,
}

pub fn predictor_quality(pred: &Predictor, reference: &Dataset) -> Result<QualityReport> {
    if reference.is_empty() {
        return Err(Error::input("reference dataset is empty"));
    }
    let y = reference.require_labels()?;
    let f = pred.predict(reference.features())?;
    quality_from_values(&f, y)
}

pub fn quality_from_values(predictions: &DVector<f64>, labels: &DVector<f64>) -> Result<QualityReport> {
    if labels.is_empty() || predictions.len() != labels.len() {
        return Err(Error::input("predictions and labels must be non-empty and equally long"));
    }
    let n = labels.len();
    let mse = (predictions - labels).norm_squared() / n as f64;
    let second = labels.norm_squared() / n as f64;
    let ratio = if second > 0.0 {
        mse / second
    } else if mse == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(QualityReport {
        n,
        mse_vs_labels: mse,
        ratio_to_label_second_moment: ratio,
        likely_unhelpful: ratio > UNHELPFUL_RATIO,
    })
}
