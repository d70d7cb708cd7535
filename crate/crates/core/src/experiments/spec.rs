use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Surface;
use crate::error::{Error, Result};
use crate::kernels::{Bandwidth, KernelFamily};
use crate::predictors::PredictorRef;
use crate::uncertainty::BiasFormula;

pub const EXPERIMENT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Coverage,
    ErrorScatter,
    ArrowComparison,
    Distribution,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Coverage => "coverage",
            ExperimentKind::ErrorScatter => "error_scatter",
            ExperimentKind::ArrowComparison => "arrow_comparison",
            ExperimentKind::Distribution => "distribution",
        }
    }
}

/// How each replicate draws its fitting sets from the pools.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resampling {
    /// Without replacement.
    #[default]
    Subsample,
    /// With replacement.
    Bootstrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSource {
    /// Rows of the labeled pool, held out of that target's fits.
    #[default]
    LabeledPool,
    /// Fresh draws from the covariate distribution (simulation only).
    Fresh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Simulation {
        #[serde(default = "default_noise_sd")]
        noise_sd: f64,
        #[serde(default)]
        surface: Surface,
        /// Rows in the independent training set of a `knn` predictor.
        #[serde(default = "default_training_size")]
        training_size: usize,
    },
    /// Labeled and unlabeled pools from a bundle manifest; the held-out
    /// label of each target row is the truth proxy.
    Bundle { manifest: PathBuf },
}

fn default_noise_sd() -> f64 {
    0.2_f64.sqrt()
}

fn default_training_size() -> usize {
    10_000
}

fn default_fraction() -> f64 {
    0.1
}

fn default_true() -> bool {
    true
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Simulation {
            noise_sd: default_noise_sd(),
            surface: Surface::Piecewise,
            training_size: default_training_size(),
        }
    }
}

/// Declarative experiment description, read from JSON.
///
/// Each `(n, N)` pair gives the per-fit sizes. The pools they are drawn from
/// hold `n / subsample_fraction` and `N / subsample_fraction` rows (rounded
/// up) in simulation mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub schema_version: u32,
    pub kind: ExperimentKind,
    pub sizes: Vec<(usize, usize)>,
    pub n_targets: usize,
    pub n_replicates: usize,
    pub alpha: f64,
    pub bandwidth: Bandwidth,
    #[serde(default)]
    pub kernel: KernelFamily,
    /// `None` uses the prediction column of a bundle.
    #[serde(default)]
    pub predictor: Option<PredictorRef>,
    #[serde(default = "default_true")]
    pub bias_correction: bool,
    #[serde(default)]
    pub bias_formula: BiasFormula,
    pub seed: u64,
    #[serde(default)]
    pub resampling: Resampling,
    #[serde(default = "default_fraction")]
    pub subsample_fraction: f64,
    #[serde(default)]
    pub data: DataSource,
    #[serde(default)]
    pub target_source: TargetSource,
}

fn schema(field: &str, message: impl Into<String>) -> Error {
    Error::Schema {
        field: field.to_string(),
        message: message.into(),
    }
}

impl ExperimentSpec {
    /// Parse and validate; relative bundle paths resolve against `base`.
    pub fn from_json(text: &str, base: Option<&Path>) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut spec: ExperimentSpec = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            schema(if path == "." { "spec" } else { &path }, e.inner().to_string())
        })?;
        if let (DataSource::Bundle { manifest }, Some(base)) = (&mut spec.data, base) {
            if manifest.is_relative() {
                *manifest = base.join(&*manifest);
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path.parent())
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != EXPERIMENT_SCHEMA_VERSION {
            return Err(schema(
                "schema_version",
                format!("expected {EXPERIMENT_SCHEMA_VERSION}, found {}", self.schema_version),
            ));
        }
        if self.sizes.is_empty() {
            return Err(schema("sizes", "at least one (n, N) pair is required"));
        }
        if self.sizes.iter().any(|&(n, big_n)| n == 0 || big_n == 0) {
            return Err(schema("sizes", "sizes must be at least 1"));
        }
        if self.n_targets == 0 {
            return Err(schema("n_targets", "must be at least 1"));
        }
        if self.n_replicates < 2 {
            return Err(schema("n_replicates", "at least two replicates are needed for a standard error"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(schema("alpha", "must lie in (0, 1)"));
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(schema("subsample_fraction", "must lie in (0, 1]"));
        }
        match &self.data {
            DataSource::Simulation { noise_sd, .. } => {
                if !(*noise_sd >= 0.0) || !noise_sd.is_finite() {
                    return Err(schema("data.noise_sd", "must be finite and nonnegative"));
                }
                match &self.predictor {
                    None => return Err(schema("predictor", "simulation experiments need a predictor")),
                    Some(PredictorRef::FileBacked { .. }) => {
                        return Err(schema("predictor", "file-backed predictions cannot follow generated pools"))
                    }
                    Some(_) => {}
                }
            }
            DataSource::Bundle { .. } => {
                if self.target_source == TargetSource::Fresh {
                    return Err(schema("target_source", "fresh targets need a simulation data source"));
                }
                if self.predictor.is_some() {
                    return Err(schema("predictor", "bundle experiments use the bundle's prediction column"));
                }
            }
        }
        Ok(())
    }

    pub fn is_simulation(&self) -> bool {
        matches!(self.data, DataSource::Simulation { .. })
    }
}
