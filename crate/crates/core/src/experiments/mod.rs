//! Declarative Monte Carlo experiments comparing conventional local linear
//! inference with its prediction-powered counterpart.
//!
//! For each `(n, N)` cell, target points are chosen, and at every target the
//! fitting sets are redrawn from fixed pools `n_replicates` times. The spread
//! of the replicate estimates gives each method's standard error; intervals
//! built from it are checked against the truth.

mod engine;
mod report;
mod spec;

pub use report::{
    write_outputs, BlockSummary, CellMetrics, CellSummary, ExperimentResult, MethodSummary, Quadrants, Rate,
    GRADIENT_BLOCKS, MAX_CELL_FAILURE_FRACTION,
};
pub use spec::{DataSource, ExperimentKind, ExperimentSpec, Resampling, TargetSource, EXPERIMENT_SCHEMA_VERSION};

use crate::error::Result;

/// Run every cell of `spec`. Deterministic for a given spec regardless of the
/// rayon worker count.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let bundle = engine::load_bundle_for(spec)?;
    let runs = (0..spec.sizes.len())
        .map(|cell| engine::run_cell(spec, cell, bundle.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    Ok(report::build_result(spec, runs))
}

fn run_as(spec: &ExperimentSpec, kind: ExperimentKind) -> Result<ExperimentResult> {
    let mut s = spec.clone();
    s.kind = kind;
    run_experiment(&s)
}

pub fn run_coverage(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    run_as(spec, ExperimentKind::Coverage)
}

pub fn run_arrow_comparison(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    run_as(spec, ExperimentKind::ArrowComparison)
}

pub fn run_error_scatter(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    run_as(spec, ExperimentKind::ErrorScatter)
}
