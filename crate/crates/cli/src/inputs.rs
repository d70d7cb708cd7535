//! Dataset and predictor flags shared by several subcommands.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use local_ppi::data::{load_bundle, load_csv, CsvSchema};
use local_ppi::predictors::{OracleFunction, Predictor, PredictorRef};
use local_ppi::{Dataset, Error, Result};
use serde::Serialize;

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Bundle manifest naming the labeled/unlabeled files and their columns.
    #[arg(long, conflicts_with_all = ["labeled", "features", "label", "unlabeled"])]
    pub bundle: Option<PathBuf>,

    /// Labeled CSV file.
    #[arg(long, requires = "features")]
    pub labeled: Option<PathBuf>,

    /// Unlabeled CSV file.
    #[arg(long)]
    pub unlabeled: Option<PathBuf>,

    /// Comma-separated feature column names.
    #[arg(long, value_delimiter = ',')]
    pub features: Option<Vec<String>>,

    /// Label column of the labeled file.
    #[arg(long, default_value = "y")]
    pub label: String,

    /// Column holding predictor outputs in both files.
    #[arg(long)]
    pub prediction_column: Option<String>,

    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
}

/// Where the loaded data came from, echoed into reports.
#[derive(Debug, Clone, Serialize)]
pub struct DataSummary {
    pub labeled: PathBuf,
    pub unlabeled: Option<PathBuf>,
    pub n_labeled: usize,
    pub n_unlabeled: Option<usize>,
    pub dropped_labeled_rows: usize,
    pub dropped_unlabeled_rows: Option<usize>,
    pub dim: usize,
    pub simulated: bool,
}

pub struct LoadedData {
    pub labeled: Dataset,
    pub unlabeled: Option<Dataset>,
    pub summary: DataSummary,
}

impl DataArgs {
    pub fn load(&self) -> Result<LoadedData> {
        if let Some(manifest) = &self.bundle {
            let b = load_bundle(manifest)?;
            let base = manifest.parent().map(PathBuf::from).unwrap_or_default();
            let mut schema = b.manifest.schema.clone();
            if self.prediction_column.is_some() {
                schema.prediction = self.prediction_column.clone();
            }
            let summary = DataSummary {
                labeled: base.join(&b.manifest.labeled),
                unlabeled: b.manifest.unlabeled.as_ref().map(|u| base.join(u)),
                n_labeled: b.labeled.dataset.len(),
                n_unlabeled: b.unlabeled.as_ref().map(|u| u.dataset.len()),
                dropped_labeled_rows: b.labeled.dropped_rows,
                dropped_unlabeled_rows: b.unlabeled.as_ref().map(|u| u.dropped_rows),
                dim: b.labeled.dataset.dim(),
                simulated: b.manifest.generator.is_some(),
            };
            return Ok(LoadedData {
                labeled: b.labeled.dataset,
                unlabeled: b.unlabeled.map(|u| u.dataset.without_labels()),
                summary,
            });
        }
        let labeled_path = self
            .labeled
            .as_ref()
            .ok_or_else(|| Error::input("pass --bundle or --labeled with --features"))?;
        let features = self.features.clone().unwrap_or_default();
        let mut schema = CsvSchema::new(features.clone()).with_label(self.label.clone());
        schema.prediction = self.prediction_column.clone();
        schema.delimiter = self.delimiter;
        let lab = load_csv(labeled_path, &schema)?;
        let unl = match &self.unlabeled {
            Some(path) => {
                let mut s = CsvSchema::new(features);
                s.prediction = self.prediction_column.clone();
                s.delimiter = self.delimiter;
                Some(load_csv(path, &s)?)
            }
            None => None,
        };
        let tag = |p: &PathBuf| format!("file:{}", p.display());
        Ok(LoadedData {
            summary: DataSummary {
                labeled: labeled_path.clone(),
                unlabeled: self.unlabeled.clone(),
                n_labeled: lab.dataset.len(),
                n_unlabeled: unl.as_ref().map(|u| u.dataset.len()),
                dropped_labeled_rows: lab.dropped_rows,
                dropped_unlabeled_rows: unl.as_ref().map(|u| u.dropped_rows),
                dim: lab.dataset.dim(),
                simulated: false,
            },
            labeled: lab.dataset.with_provenance(tag(labeled_path)),
            unlabeled: unl.map(|u| u.dataset.with_provenance(tag(self.unlabeled.as_ref().unwrap()))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PredictorKind {
    Knn,
    NoisyOracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OracleArg {
    Piecewise,
    Linear,
    Quadratic,
    Zero,
}

impl From<OracleArg> for OracleFunction {
    fn from(v: OracleArg) -> Self {
        match v {
            OracleArg::Piecewise => OracleFunction::Piecewise,
            OracleArg::Linear => OracleFunction::Linear,
            OracleArg::Quadratic => OracleFunction::Quadratic,
            OracleArg::Zero => OracleFunction::Zero,
        }
    }
}

#[derive(Debug, Args)]
pub struct PredictorArgs {
    /// Single-column CSV (`prediction`) aligned with the labeled rows.
    #[arg(long, conflicts_with = "predictor")]
    pub predictions: Option<PathBuf>,

    /// Single-column CSV (`prediction`) aligned with the unlabeled rows.
    #[arg(long, requires = "predictions")]
    pub unlabeled_predictions: Option<PathBuf>,

    /// Compute predictions in process instead of reading them.
    #[arg(long, value_enum)]
    pub predictor: Option<PredictorKind>,

    #[arg(long, default_value_t = 10)]
    pub knn_k: usize,

    /// Labeled CSV (same feature and label columns) to train the knn predictor on.
    #[arg(long)]
    pub knn_training: Option<PathBuf>,

    /// Accept a knn training set that shares provenance with the inference data.
    #[arg(long)]
    pub allow_shared_provenance: bool,

    #[arg(long, default_value_t = 0.316)]
    pub oracle_sd: f64,

    #[arg(long, value_enum, default_value = "piecewise")]
    pub oracle_function: OracleArg,

    #[arg(long, default_value_t = 0)]
    pub oracle_seed: u64,
}

/// How predictions were obtained, echoed into reports.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum PredictionSource {
    Column { name: String },
    Files { labeled: PathBuf, unlabeled: Option<PathBuf> },
    Predictor { predictor: PredictorRef, training: Option<PathBuf> },
    None,
}

impl PredictorArgs {
    /// Attach predictions to the labeled and unlabeled sets, or leave them as
    /// loaded when no predictor flag is given.
    pub fn apply(&self, data: &mut LoadedData, columns: &DataArgs) -> Result<PredictionSource> {
        if let Some(path) = &self.predictions {
            let p = Predictor::from_file(path)?;
            data.labeled = p.attach(&data.labeled)?;
            if let (Some(u), Some(upath)) = (&data.unlabeled, &self.unlabeled_predictions) {
                data.unlabeled = Some(Predictor::from_file(upath)?.attach(u)?);
            }
            return Ok(PredictionSource::Files {
                labeled: path.clone(),
                unlabeled: self.unlabeled_predictions.clone(),
            });
        }
        let Some(kind) = self.predictor else {
            return Ok(match (&columns.prediction_column, data.labeled.predictions()) {
                (Some(name), _) => PredictionSource::Column { name: name.clone() },
                (None, Some(_)) => PredictionSource::Column {
                    name: "bundle".into(),
                },
                _ => PredictionSource::None,
            });
        };
        let (reference, training_path, training) = match kind {
            PredictorKind::NoisyOracle => {
                if !data.summary.simulated {
                    return Err(Error::input("the noisy oracle is only available for simulated bundles"));
                }
                let r = PredictorRef::NoisyOracle {
                    sd: self.oracle_sd,
                    function: self.oracle_function.into(),
                    seed: self.oracle_seed,
                };
                (r, None, None)
            }
            PredictorKind::Knn => {
                let path = self
                    .knn_training
                    .as_ref()
                    .ok_or_else(|| Error::input("--predictor knn needs --knn-training"))?;
                let features = columns
                    .features
                    .clone()
                    .ok_or_else(|| Error::input("--predictor knn needs --features"))?;
                let mut schema = CsvSchema::new(features).with_label(columns.label.clone());
                schema.delimiter = columns.delimiter;
                let t = load_csv(path, &schema)?.dataset.with_provenance(format!("file:{}", path.display()));
                let r = PredictorRef::Knn {
                    k: self.knn_k,
                    allow_shared_provenance: self.allow_shared_provenance,
                };
                (r, Some(path.clone()), Some(t))
            }
        };
        let predictor = Predictor::from_ref(&reference, training)?;
        if let Predictor::Knn(knn) = &predictor {
            let mut sets = vec![&data.labeled];
            sets.extend(data.unlabeled.as_ref());
            knn.check_independence(&sets)?;
        }
        data.labeled = predictor.attach(&data.labeled)?;
        if let Some(u) = &data.unlabeled {
            data.unlabeled = Some(predictor.attach(u)?);
        }
        Ok(PredictionSource::Predictor {
            predictor: reference,
            training: training_path,
        })
    }
}
