use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::engine::{CellRun, Target};
use super::spec::{ExperimentKind, ExperimentSpec, EXPERIMENT_SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::estimators::Method;
use crate::special::normal_quantile;

/// Largest tolerated fraction of failed fits before a cell is invalid.
pub const MAX_CELL_FAILURE_FRACTION: f64 = 0.1;

/// Relative size below which a replicate standard error counts as zero
/// (rounding noise of exact fits).
const DEGENERATE_SE: f64 = 1e-10;

/// Gradient components (0-based) grouped as in the simulation surface: the
/// nonlinear pieces and the linear piece.
pub const GRADIENT_BLOCKS: [(&str, &[usize]); 2] = [("nonlinear", &[0, 1, 2]), ("linear", &[3, 4, 5, 6])];

/// Empirical proportion with its trial count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub value: f64,
    pub hits: usize,
    pub trials: usize,
}

impl Rate {
    fn from_counts(hits: usize, trials: usize) -> Option<Self> {
        (trials > 0).then(|| Rate {
            value: hits as f64 / trials as f64,
            hits,
            trials,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSummary {
    pub block: String,
    pub components: Vec<usize>,
    pub mse: f64,
    pub standard_error: f64,
    /// `mse / standard_error`.
    pub standardized_mse: f64,
    pub mean_error: f64,
    pub sd_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub coverage: Option<Rate>,
    pub debiased_coverage: Option<Rate>,
    /// De-biased coverage under the other value-bias formula.
    pub debiased_coverage_alt: Option<Rate>,
    pub gradient_coverage: Option<Rate>,
    pub gradient_debiased_coverage: Option<Rate>,
    /// Mean over targets of the per-target replicate standard deviation.
    pub standard_error: f64,
    pub mse: f64,
    pub mean_error: f64,
    pub sd_error: f64,
    pub error_q025: f64,
    pub error_q975: f64,
    pub gradient: Option<Vec<BlockSummary>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quadrants {
    pub std_down_mse_down: f64,
    pub std_down_mse_up: f64,
    pub std_up_mse_down: f64,
    pub std_up_mse_up: f64,
    pub targets: usize,
}

impl Quadrants {
    pub fn std_down(&self) -> f64 {
        self.std_down_mse_down + self.std_down_mse_up
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    /// `100 (1 - se_PP / se_con)` from the mean standard errors.
    pub se_decay_pct: f64,
    /// Mean over targets of the per-target decay.
    pub se_decay_pct_target_mean: f64,
    pub mse_reduction_pct: f64,
    /// Median over targets of the PPI/conventional interval-width ratio.
    pub width_ratio_median: f64,
    /// Fraction of targets whose PPI interval is narrower.
    pub narrower_fraction: f64,
    /// Ratio of the PPI to conventional 2.5%-97.5% error-band widths.
    pub error_band_ratio: f64,
    pub quadrants: Quadrants,
    pub conventional: MethodSummary,
    pub ppi: MethodSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub n: usize,
    #[serde(rename = "N")]
    pub big_n: usize,
    pub labeled_pool: usize,
    pub unlabeled_pool: usize,
    pub attempts: usize,
    pub failures_conventional: usize,
    pub failures_ppi: usize,
    pub targets_with_bias_terms: usize,
    /// More than the tolerated share of fits failed; metrics are withheld.
    pub valid: bool,
    /// Some target had a zero standard error, so its intervals collapse.
    pub degenerate: bool,
    pub truth_kind: String,
    pub metrics: Option<CellMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub schema_version: u32,
    pub kind: ExperimentKind,
    pub spec: ExperimentSpec,
    pub cells: Vec<CellSummary>,
    #[serde(skip)]
    pub(crate) runs: Vec<CellRun>,
}

impl ExperimentResult {
    pub fn cell(&self, n: usize, big_n: usize) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.n == n && c.big_n == big_n)
    }
}

impl std::fmt::Debug for CellRun {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "CellRun({}, {})", self.n, self.big_n)
    }
}

impl Clone for CellRun {
    fn clone(&self) -> Self {
        CellRun {
            n: self.n,
            big_n: self.big_n,
            labeled_pool: self.labeled_pool,
            unlabeled_pool: self.unlabeled_pool,
            targets: self.targets.clone(),
            conventional: self.conventional.clone(),
            ppi: self.ppi.clone(),
        }
    }
}

impl PartialEq for CellRun {
    fn eq(&self, other: &Self) -> bool {
        self.conventional == other.conventional && self.ppi == other.ppi
    }
}

/// Type-7 quantile of sorted data.
pub(crate) fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Per-target statistics of one method.
pub(crate) struct TargetStats {
    pub thetas: Vec<DVector<f64>>,
    pub se: DVector<f64>,
    pub mse: f64,
}

pub(crate) fn target_stats(reps: &[Option<DVector<f64>>], truth: f64) -> Option<TargetStats> {
    let thetas: Vec<DVector<f64>> = reps.iter().flatten().cloned().collect();
    if thetas.len() < 2 {
        return None;
    }
    let dim = thetas[0].len();
    let se = DVector::from_fn(dim, |j, _| sd(&thetas.iter().map(|t| t[j]).collect::<Vec<_>>()));
    let mse = mean(&thetas.iter().map(|t| (t[0] - truth).powi(2)).collect::<Vec<_>>());
    Some(TargetStats { thetas, se, mse })
}

fn covered(estimate: f64, shift: f64, truth: f64, half: f64) -> bool {
    (estimate - shift - truth).abs() <= half
}

fn summarize_method(
    method: Method,
    targets: &[Target],
    stats: &[Option<TargetStats>],
    z: f64,
) -> MethodSummary {
    let (mut hits, mut trials) = (0, 0);
    let (mut dhits, mut dalt, mut dtrials) = (0, 0, 0);
    let (mut ghits, mut gdhits, mut gtrials, mut gdtrials) = (0, 0, 0, 0);
    let mut errors = Vec::new();
    let mut ses = Vec::new();
    let mut grad_err: Vec<Vec<f64>> = Vec::new();
    let mut grad_se: Vec<Vec<f64>> = Vec::new();
    for (target, st) in targets.iter().zip(stats) {
        let Some(st) = st else { continue };
        ses.push(st.se[0]);
        let half = z * st.se[0];
        for th in &st.thetas {
            errors.push(th[0] - target.truth);
            trials += 1;
            hits += usize::from(covered(th[0], 0.0, target.truth, half));
            if let Some(b) = &target.bias {
                dtrials += 1;
                dhits += usize::from(covered(th[0], b.value_shift, target.truth, half));
                dalt += usize::from(covered(th[0], b.value_shift_alt, target.truth, half));
            }
        }
        if let Some(g) = &target.grad_truth {
            let p = g.len();
            if grad_err.is_empty() {
                grad_err = vec![Vec::new(); p];
                grad_se = vec![Vec::new(); p];
            }
            for j in 0..p {
                grad_se[j].push(st.se[j + 1]);
                let half = z * st.se[j + 1];
                for th in &st.thetas {
                    grad_err[j].push(th[j + 1] - g[j]);
                    gtrials += 1;
                    ghits += usize::from(covered(th[j + 1], 0.0, g[j], half));
                    if let Some(b) = &target.bias {
                        gdtrials += 1;
                        gdhits += usize::from(covered(th[j + 1], b.grad_shift[j], g[j], half));
                    }
                }
            }
        }
    }
    let mut sorted = errors.clone();
    sorted.sort_by(f64::total_cmp);
    let gradient = (!grad_err.is_empty() && grad_err.len() >= 7).then(|| {
        GRADIENT_BLOCKS
            .iter()
            .map(|(name, comps)| {
                let errs: Vec<f64> = comps.iter().flat_map(|&j| grad_err[j].iter().copied()).collect();
                let ses: Vec<f64> = comps.iter().flat_map(|&j| grad_se[j].iter().copied()).collect();
                let mse = mean(&errs.iter().map(|e| e * e).collect::<Vec<_>>());
                let se = mean(&ses);
                BlockSummary {
                    block: name.to_string(),
                    components: comps.iter().map(|j| j + 1).collect(),
                    mse,
                    standard_error: se,
                    standardized_mse: mse / se,
                    mean_error: mean(&errs),
                    sd_error: sd(&errs),
                }
            })
            .collect()
    });
    MethodSummary {
        method,
        coverage: Rate::from_counts(hits, trials),
        debiased_coverage: Rate::from_counts(dhits, dtrials),
        debiased_coverage_alt: Rate::from_counts(dalt, dtrials),
        gradient_coverage: Rate::from_counts(ghits, gtrials),
        gradient_debiased_coverage: Rate::from_counts(gdhits, gdtrials),
        standard_error: mean(&ses),
        mse: mean(&errors.iter().map(|e| e * e).collect::<Vec<_>>()),
        mean_error: mean(&errors),
        sd_error: sd(&errors),
        error_q025: quantile(&sorted, 0.025),
        error_q975: quantile(&sorted, 0.975),
        gradient,
    }
}

pub(crate) struct CellDetail {
    pub con: Vec<Option<TargetStats>>,
    pub ppi: Vec<Option<TargetStats>>,
}

pub(crate) fn cell_detail(run: &CellRun) -> CellDetail {
    let per = |reps: &[Vec<Option<DVector<f64>>>]| {
        run.targets
            .iter()
            .zip(reps)
            .map(|(t, r)| target_stats(r, t.truth))
            .collect()
    };
    CellDetail {
        con: per(&run.conventional),
        ppi: per(&run.ppi),
    }
}

fn failures(reps: &[Vec<Option<DVector<f64>>>]) -> usize {
    reps.iter()
        .map(|r| {
            let ok = r.iter().filter(|v| v.is_some()).count();
            if ok < 2 {
                r.len()
            } else {
                r.len() - ok
            }
        })
        .sum()
}

pub(crate) fn summarize_cell(spec: &ExperimentSpec, run: &CellRun) -> CellSummary {
    let attempts = run.targets.len() * spec.n_replicates;
    let failures_conventional = failures(&run.conventional);
    let failures_ppi = failures(&run.ppi);
    let limit = MAX_CELL_FAILURE_FRACTION * attempts as f64;
    let valid = failures_conventional as f64 <= limit && failures_ppi as f64 <= limit;
    let detail = cell_detail(run);
    let degenerate = detail
        .con
        .iter()
        .chain(&detail.ppi)
        .flatten()
        .any(|s| s.se[0] <= DEGENERATE_SE * (1.0 + s.thetas[0][0].abs()));
    let z = normal_quantile(1.0 - spec.alpha / 2.0);

    let metrics = valid.then(|| {
        let conventional = summarize_method(Method::Conventional, &run.targets, &detail.con, z);
        let ppi = summarize_method(Method::Ppi, &run.targets, &detail.ppi, z);
        let mut ratios = Vec::new();
        let mut decays = Vec::new();
        let mut quad = [0usize; 4];
        for (c, p) in detail.con.iter().zip(&detail.ppi) {
            let (Some(c), Some(p)) = (c, p) else { continue };
            let ratio = p.se[0] / c.se[0];
            ratios.push(ratio);
            decays.push(100.0 * (1.0 - ratio));
            let std_down = p.se[0] < c.se[0];
            let mse_down = p.mse < c.mse;
            quad[usize::from(!std_down) * 2 + usize::from(!mse_down)] += 1;
        }
        let paired = ratios.len();
        let pct = |k: usize| if paired > 0 { 100.0 * k as f64 / paired as f64 } else { f64::NAN };
        let mut sorted = ratios.clone();
        sorted.sort_by(f64::total_cmp);
        let band = |m: &MethodSummary| m.error_q975 - m.error_q025;
        CellMetrics {
            se_decay_pct: 100.0 * (1.0 - ppi.standard_error / conventional.standard_error),
            se_decay_pct_target_mean: mean(&decays),
            mse_reduction_pct: 100.0 * (1.0 - ppi.mse / conventional.mse),
            width_ratio_median: quantile(&sorted, 0.5),
            narrower_fraction: ratios.iter().filter(|&&r| r < 1.0).count() as f64 / paired.max(1) as f64,
            error_band_ratio: band(&ppi) / band(&conventional),
            quadrants: Quadrants {
                std_down_mse_down: pct(quad[0]),
                std_down_mse_up: pct(quad[1]),
                std_up_mse_down: pct(quad[2]),
                std_up_mse_up: pct(quad[3]),
                targets: paired,
            },
            conventional,
            ppi,
        }
    });

    CellSummary {
        n: run.n,
        big_n: run.big_n,
        labeled_pool: run.labeled_pool,
        unlabeled_pool: run.unlabeled_pool,
        attempts,
        failures_conventional,
        failures_ppi,
        targets_with_bias_terms: run.targets.iter().filter(|t| t.bias.is_some()).count(),
        valid,
        degenerate,
        truth_kind: if spec.is_simulation() { "true_function" } else { "held_out_label" }.into(),
        metrics,
    }
}

fn num(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

fn opt_rate(r: &Option<Rate>) -> String {
    r.map_or_else(String::new, |r| num(r.value))
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Write `summary.json` and the CSV tables for the experiment kind into
/// `dir` (created if needed). Output bytes depend only on the result.
pub fn write_outputs(result: &ExperimentResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_string_pretty(result).expect("result serializes");
    write_file(dir, "summary.json", &(json + "\n"))?;

    let mut cov = String::from(
        "n,N,method,valid,trials,coverage,debiased_coverage,debiased_coverage_alt,gradient_coverage,\
         gradient_debiased_coverage,standard_error,se_decay_pct,mse,failures\n",
    );
    for c in &result.cells {
        for (method, fails) in [(Method::Conventional, c.failures_conventional), (Method::Ppi, c.failures_ppi)] {
            let m = c.metrics.as_ref().map(|m| if method == Method::Ppi { &m.ppi } else { &m.conventional });
            let decay = c.metrics.as_ref().map_or(String::new(), |m| num(m.se_decay_pct));
            let _ = writeln!(
                cov,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                c.n,
                c.big_n,
                method.as_str(),
                c.valid,
                m.and_then(|m| m.coverage).map_or(0, |r| r.trials),
                m.map_or(String::new(), |m| opt_rate(&m.coverage)),
                m.map_or(String::new(), |m| opt_rate(&m.debiased_coverage)),
                m.map_or(String::new(), |m| opt_rate(&m.debiased_coverage_alt)),
                m.map_or(String::new(), |m| opt_rate(&m.gradient_coverage)),
                m.map_or(String::new(), |m| opt_rate(&m.gradient_debiased_coverage)),
                m.map_or(String::new(), |m| num(m.standard_error)),
                decay,
                m.map_or(String::new(), |m| num(m.mse)),
                fails
            );
        }
    }
    write_file(dir, "coverage.csv", &cov)?;

    let mut targets = String::from("n,N,target,truth,se_conventional,se_ppi,mse_conventional,mse_ppi,std_change,mse_change\n");
    for (c, run) in result.cells.iter().zip(&result.runs) {
        let d = cell_detail(run);
        for (t, target) in run.targets.iter().enumerate() {
            let (se_c, se_p, mse_c, mse_p, sc, mc) = match (&d.con[t], &d.ppi[t]) {
                (Some(a), Some(b)) => (
                    num(a.se[0]),
                    num(b.se[0]),
                    num(a.mse),
                    num(b.mse),
                    if b.se[0] < a.se[0] { "down" } else { "up" },
                    if b.mse < a.mse { "down" } else { "up" },
                ),
                _ => Default::default(),
            };
            let _ = writeln!(targets, "{},{},{t},{},{se_c},{se_p},{mse_c},{mse_p},{sc},{mc}", c.n, c.big_n, num(target.truth));
        }
    }
    write_file(dir, "targets.csv", &targets)?;

    match result.kind {
        ExperimentKind::Coverage => {}
        ExperimentKind::ArrowComparison => {
            let mut q = String::from("n,N,quadrant,percent,targets\n");
            for c in &result.cells {
                if let Some(m) = &c.metrics {
                    let qd = &m.quadrants;
                    for (name, v) in [
                        ("std_down_mse_down", qd.std_down_mse_down),
                        ("std_down_mse_up", qd.std_down_mse_up),
                        ("std_up_mse_down", qd.std_up_mse_down),
                        ("std_up_mse_up", qd.std_up_mse_up),
                    ] {
                        let _ = writeln!(q, "{},{},{name},{},{}", c.n, c.big_n, num(v), qd.targets);
                    }
                }
            }
            write_file(dir, "quadrants.csv", &q)?;
        }
        ExperimentKind::ErrorScatter | ExperimentKind::Distribution => {
            let mut e = String::from("n,N,target,replicate,truth,error_conventional,error_ppi\n");
            for (c, run) in result.cells.iter().zip(&result.runs) {
                for (t, target) in run.targets.iter().enumerate() {
                    for r in 0..run.conventional[t].len() {
                        let err = |v: &Option<DVector<f64>>| v.as_ref().map_or(String::new(), |v| num(v[0] - target.truth));
                        let _ = writeln!(
                            e,
                            "{},{},{t},{r},{},{},{}",
                            c.n,
                            c.big_n,
                            num(target.truth),
                            err(&run.conventional[t][r]),
                            err(&run.ppi[t][r])
                        );
                    }
                }
            }
            write_file(dir, "errors.csv", &e)?;
            let mut g = String::from("n,N,method,quantity,mean_error,sd_error,mse,standard_error,standardized_mse\n");
            for c in &result.cells {
                let Some(m) = &c.metrics else { continue };
                for ms in [&m.conventional, &m.ppi] {
                    let _ = writeln!(
                        g,
                        "{},{},{},value,{},{},{},{},{}",
                        c.n,
                        c.big_n,
                        ms.method.as_str(),
                        num(ms.mean_error),
                        num(ms.sd_error),
                        num(ms.mse),
                        num(ms.standard_error),
                        num(ms.mse / ms.standard_error)
                    );
                    for b in ms.gradient.iter().flatten() {
                        let _ = writeln!(
                            g,
                            "{},{},{},gradient_{},{},{},{},{},{}",
                            c.n,
                            c.big_n,
                            ms.method.as_str(),
                            b.block,
                            num(b.mean_error),
                            num(b.sd_error),
                            num(b.mse),
                            num(b.standard_error),
                            num(b.standardized_mse)
                        );
                    }
                }
            }
            let name = if result.kind == ExperimentKind::Distribution { "distribution.csv" } else { "error_summary.csv" };
            write_file(dir, name, &g)?;
        }
    }
    Ok(())
}

pub(crate) fn build_result(spec: &ExperimentSpec, runs: Vec<CellRun>) -> ExperimentResult {
    ExperimentResult {
        schema_version: EXPERIMENT_SCHEMA_VERSION,
        kind: spec.kind,
        spec: spec.clone(),
        cells: runs.iter().map(|r| summarize_cell(spec, r)).collect(),
        runs,
    }
}
