use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use local_ppi::data::{
    generate, load_csv, pca_fit, pca_transform, write_csv, BundleManifest, CsvSchema, SimulationSpec, Surface,
    BUNDLE_SCHEMA_VERSION, SIM_DIM,
};
use local_ppi::estimators::default_hd_t;
use local_ppi::experiments::{run_experiment, write_outputs, ExperimentSpec};
use local_ppi::kernels::default_bandwidth;
use local_ppi::predictors::{quality_from_values, QualityReport};
use local_ppi::uncertainty::{bootstrap_covariance, ci_value, plugin_bias_terms, region_gradient};
use local_ppi::{
    Bandwidth, BiasFormula, BiasTerms, ConfidenceInterval, CovarianceEstimate, Dataset, Error, Estimator, KernelFamily,
    KernelSpec, LocalFit, LocalLinear, Rectifier,
};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::emit;
use crate::inputs::{DataArgs, DataSummary, PredictionSource, PredictorArgs};

/// Version of the JSON reports written by `infer` and `predict-quality`.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes") + "\n"
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SurfaceArg {
    Piecewise,
    Linear,
    Quadratic,
}

impl From<SurfaceArg> for Surface {
    fn from(s: SurfaceArg) -> Self {
        match s {
            SurfaceArg::Piecewise => Surface::Piecewise,
            SurfaceArg::Linear => Surface::Linear,
            SurfaceArg::Quadratic => Surface::Quadratic,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Labeled rows.
    #[arg(long)]
    n: usize,
    /// Unlabeled rows.
    #[arg(long = "N")]
    big_n: usize,
    /// Variance of the additive label noise.
    #[arg(long, default_value_t = 0.2)]
    noise_var: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "piecewise")]
    surface: SurfaceArg,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

pub fn simulate(a: SimulateArgs) -> anyhow::Result<()> {
    if !(a.noise_var >= 0.0) {
        return Err(Error::input("--noise-var must be nonnegative").into());
    }
    let mut spec = SimulationSpec::new(a.n, a.big_n, a.noise_var.sqrt(), a.seed);
    spec.surface = a.surface.into();
    let data = generate(&spec)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;

    let features: Vec<String> = (1..=SIM_DIM).map(|j| format!("x{j}")).collect();
    let schema = CsvSchema::new(features.clone()).with_label("y");
    write_csv(&a.out.join("labeled.csv"), &data.labeled, &schema)?;
    write_csv(
        &a.out.join("unlabeled.csv"),
        &data.unlabeled.without_labels(),
        &CsvSchema::new(features),
    )?;

    let mut truth = String::from("set,row,m");
    for j in 1..=SIM_DIM {
        let _ = write!(truth, ",dm{j}");
    }
    truth.push('\n');
    for (set, t) in [("labeled", &data.labeled_truth), ("unlabeled", &data.unlabeled_truth)] {
        for i in 0..t.m.len() {
            let _ = write!(truth, "{set},{i},{}", t.m[i]);
            for j in 0..SIM_DIM {
                let g = t.gradient[(i, j)];
                if g.is_nan() {
                    truth.push(',');
                } else {
                    let _ = write!(truth, ",{g}");
                }
            }
            truth.push('\n');
        }
    }
    let truth_path = a.out.join("truth.csv");
    std::fs::write(&truth_path, truth).map_err(|e| Error::io(&truth_path, e))?;

    let manifest = BundleManifest {
        schema_version: BUNDLE_SCHEMA_VERSION,
        provenance: format!("simulation:seed={}", a.seed),
        schema,
        labeled: "labeled.csv".into(),
        unlabeled: Some("unlabeled.csv".into()),
        truth: Some("truth.csv".into()),
        generator: Some(serde_json::to_value(spec)?),
    };
    let path = a.out.join("manifest.json");
    std::fs::write(&path, to_json(&manifest)).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodArg {
    Con,
    Ppi,
    Hd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Gaussian,
    Epanechnikov,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BiasFormulaArg {
    HalfTrace,
    DensityTrace,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    predictors: PredictorArgs,

    /// Target point as comma-separated coordinates.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, conflicts_with = "target_row", required_unless_present = "target_row")]
    target: Option<Vec<f64>>,
    /// Use row `i` (0-based) of the labeled data as the target.
    #[arg(long)]
    target_row: Option<usize>,

    /// Bandwidth; defaults to n^(-1/(p+4)).
    #[arg(long)]
    h: Option<f64>,
    #[arg(long, value_enum, default_value = "gaussian")]
    kernel: KernelArg,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum, default_value = "ppi")]
    method: MethodArg,
    /// Regularization weight of the hd rectifier; defaults to 0.01 n/N.
    #[arg(long)]
    t: Option<f64>,
    /// Shift the interval and region by plug-in smoothing-bias estimates.
    #[arg(long)]
    bias_correct: bool,
    #[arg(long, value_enum, default_value = "half-trace")]
    bias_formula: BiasFormulaArg,
    /// Bootstrap replicates for the covariance; 0 skips uncertainty.
    #[arg(long, default_value_t = 200)]
    boot: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct InferConfig {
    data: DataSummary,
    predictions: PredictionSource,
    target: Vec<f64>,
    target_row: Option<usize>,
    bandwidth: Bandwidth,
    bandwidth_defaulted: bool,
    kernel: KernelSpec,
    alpha: f64,
    method: MethodArg,
    estimator: Estimator,
    boot: usize,
    seed: u64,
    bias_correct: bool,
    bias_formula: BiasFormula,
}

#[derive(Debug, Serialize)]
struct RegionReport {
    center: Vec<f64>,
    radius_sq: f64,
    #[serde(with = "local_ppi::linalg::serde_rows")]
    covariance: DMatrix<f64>,
    bias_shift: Option<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct UncertaintyReport {
    covariance: CovarianceEstimate,
    value_interval: ConfidenceInterval,
    gradient_region: Option<RegionReport>,
    gradient_region_error: Option<String>,
    bias: Option<BiasTerms>,
    bias_error: Option<String>,
}

#[derive(Debug, Serialize)]
struct InferReport {
    schema_version: u32,
    command: &'static str,
    config: InferConfig,
    fit: LocalFit,
    rectifier: Option<Rectifier>,
    uncertainty: Option<UncertaintyReport>,
    predictor_quality: Option<QualityReport>,
}

pub fn infer(a: InferArgs) -> anyhow::Result<()> {
    let mut data = a.data.load()?;
    let predictions = a.predictors.apply(&mut data, &a.data)?;
    let labeled = &data.labeled;
    let p = labeled.dim();

    let target = match (&a.target, a.target_row) {
        (Some(t), _) => t.clone(),
        (None, Some(i)) if i < labeled.len() => labeled.row(i),
        (None, Some(i)) => return Err(Error::input(format!("--target-row {i} is out of range")).into()),
        (None, None) => unreachable!("clap requires one target flag"),
    };
    if target.len() != p {
        return Err(Error::input(format!("target has {} coordinates, data has {p}", target.len())).into());
    }

    let family = match a.kernel {
        KernelArg::Gaussian => KernelFamily::Gaussian,
        KernelArg::Epanechnikov => KernelFamily::Epanechnikov,
    };
    let kernel = KernelSpec::new(family, p)?;
    let (bandwidth, bandwidth_defaulted) = match a.h {
        Some(h) => (Bandwidth::new(h)?, false),
        None => (default_bandwidth(labeled.len(), p, 1.0)?, true),
    };
    let estimator = match a.method {
        MethodArg::Con => Estimator::Conventional,
        MethodArg::Ppi => Estimator::Ppi,
        MethodArg::Hd => Estimator::Hd {
            t: Some(a.t.unwrap_or_else(|| default_hd_t(labeled.len(), data.unlabeled.as_ref().map_or(1, Dataset::len)))),
        },
    };
    let unlabeled = if estimator.needs_unlabeled() {
        Some(
            data.unlabeled
                .as_ref()
                .ok_or_else(|| Error::input(format!("--method {:?} needs unlabeled data", a.method).to_lowercase()))?,
        )
    } else {
        None
    };
    let bias_formula = match a.bias_formula {
        BiasFormulaArg::HalfTrace => BiasFormula::HalfTrace,
        BiasFormulaArg::DensityTrace => BiasFormula::DensityTrace,
    };

    let model = LocalLinear::new(kernel, bandwidth);
    let fit = model.fit(estimator, labeled, unlabeled, &target)?;
    let rectifier = match (estimator, unlabeled) {
        (Estimator::Ppi, _) => Some(model.compute_rectifier(labeled, &target)?),
        (Estimator::Hd { t: Some(t) }, Some(u)) => Some(model.hd_rectifier(labeled, u, &target, t)?),
        _ => None,
    };

    let uncertainty = if a.boot > 0 {
        let cov = bootstrap_covariance(
            |l, u| model.fit(estimator, l, u, &target),
            labeled,
            unlabeled,
            a.boot,
            a.seed,
        )?;
        let (bias, bias_error) = if a.bias_correct {
            match plugin_bias_terms(labeled, &target, bandwidth, &kernel, bias_formula) {
                Ok(b) => (Some(b), None),
                Err(e) => (None, Some(e.to_string())),
            }
        } else {
            (None, None)
        };
        let value_interval = ci_value(&fit, &cov, a.alpha, bias.as_ref())?;
        let (gradient_region, gradient_region_error) = match region_gradient(&fit, &cov.gradient_block(), a.alpha, bias.as_ref()) {
            Ok(r) => (
                Some(RegionReport {
                    center: r.center,
                    radius_sq: r.radius_sq,
                    covariance: r.covariance,
                    bias_shift: r.bias_shift,
                }),
                None,
            ),
            Err(e) => (None, Some(e.to_string())),
        };
        Some(UncertaintyReport {
            covariance: cov,
            value_interval,
            gradient_region,
            gradient_region_error,
            bias,
            bias_error,
        })
    } else {
        None
    };

    let predictor_quality = labeled
        .predictions()
        .map(|f| quality_from_values(f, labeled.require_labels()?))
        .transpose()?;

    let report = InferReport {
        schema_version: REPORT_SCHEMA_VERSION,
        command: "infer",
        config: InferConfig {
            data: data.summary.clone(),
            predictions,
            target,
            target_row: a.target_row,
            bandwidth,
            bandwidth_defaulted,
            kernel,
            alpha: a.alpha,
            method: a.method,
            estimator,
            boot: a.boot,
            seed: a.seed,
            bias_correct: a.bias_correct,
            bias_formula,
        },
        fit,
        rectifier,
        uncertainty,
        predictor_quality,
    };
    emit(a.out.as_ref(), &to_json(&report))
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// JSON experiment spec.
    #[arg(long)]
    spec: PathBuf,
    /// Result directory; defaults to `<spec stem>-results` beside the spec.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn experiment(a: ExperimentArgs) -> anyhow::Result<()> {
    let spec = ExperimentSpec::from_path(&a.spec)?;
    let out = a.out.unwrap_or_else(|| {
        let stem = a.spec.file_stem().map_or("experiment".into(), |s| s.to_string_lossy().into_owned());
        a.spec.with_file_name(format!("{stem}-results"))
    });
    let result = run_experiment(&spec)?;
    write_outputs(&result, &out)?;
    let mut table = String::from("n\tN\tvalid\tcov_con\tcov_ppi\tse_con\tse_ppi\tse_decay_pct\n");
    for c in &result.cells {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        let m = c.metrics.as_ref();
        let _ = writeln!(
            table,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            c.n,
            c.big_n,
            c.valid,
            fmt(m.and_then(|m| m.conventional.coverage.map(|r| r.value))),
            fmt(m.and_then(|m| m.ppi.coverage.map(|r| r.value))),
            fmt(m.map(|m| m.conventional.standard_error)),
            fmt(m.map(|m| m.ppi.standard_error)),
            fmt(m.map(|m| m.se_decay_pct)),
        );
    }
    emit(None, &table)
}

#[derive(Debug, Args)]
pub struct PcaArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    input: PathBuf,
    /// Comma-separated columns to decompose.
    #[arg(long, value_delimiter = ',', required = true)]
    features: Vec<String>,
    /// Number of components.
    #[arg(long)]
    k: usize,
    /// Extra column copied through unchanged (e.g. the label).
    #[arg(long)]
    keep: Option<String>,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    /// Output CSV with columns pc1..pck.
    #[arg(long)]
    out: PathBuf,
    /// Also write the fitted model as JSON.
    #[arg(long)]
    model: Option<PathBuf>,
}

pub fn pca(a: PcaArgs) -> anyhow::Result<()> {
    let mut schema = CsvSchema::new(a.features.clone());
    schema.label = a.keep.clone();
    schema.delimiter = a.delimiter;
    let loaded = load_csv(&a.input, &schema)?;
    let model = pca_fit(loaded.dataset.features(), a.k)?;
    let scores = pca_transform(&model, loaded.dataset.features())?;
    let mut out = Dataset::new(scores);
    let mut out_schema = CsvSchema::new((1..=a.k).map(|j| format!("pc{j}")).collect());
    out_schema.delimiter = a.delimiter;
    if let (Some(name), Some(labels)) = (&a.keep, loaded.dataset.labels()) {
        out = out.with_labels(labels.clone())?;
        out_schema.label = Some(name.clone());
    }
    write_csv(&a.out, &out, &out_schema)?;
    if let Some(path) = &a.model {
        std::fs::write(path, to_json(&model)).map_err(|e| Error::io(path, e))?;
    }
    if loaded.dropped_rows > 0 {
        eprintln!("dropped {} rows with missing values", loaded.dropped_rows);
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct QualityArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    predictors: PredictorArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct QualityOutput {
    schema_version: u32,
    command: &'static str,
    data: DataSummary,
    predictions: PredictionSource,
    quality: QualityReport,
}

pub fn predict_quality(a: QualityArgs) -> anyhow::Result<()> {
    let mut data = a.data.load()?;
    let predictions = a.predictors.apply(&mut data, &a.data)?;
    let f = data
        .labeled
        .predictions()
        .ok_or_else(|| Error::input("no predictions: pass --prediction-column, --predictions or --predictor"))?;
    let quality = quality_from_values(f, data.labeled.require_labels()?)?;
    let report = QualityOutput {
        schema_version: REPORT_SCHEMA_VERSION,
        command: "predict-quality",
        data: data.summary,
        predictions,
        quality,
    };
    emit(a.out.as_ref(), &to_json(&report))
}
