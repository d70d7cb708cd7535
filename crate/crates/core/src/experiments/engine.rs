use nalgebra::DVector;
use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::spec::{DataSource, ExperimentSpec, Resampling, TargetSource};
use crate::data::{generate, load_bundle, LoadedBundle, SimulationSpec, Surface, SIM_DIM};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimators::LocalLinear;
use crate::kernels::{KernelMoments, KernelSpec};
use crate::predictors::Predictor;
use crate::rng::{derive_seed, stream_rng};
use crate::uncertainty::{plugin_bias_terms, BiasSource, BiasTerms};

const POOL_STREAM: u64 = 11;
const TRAINING_STREAM: u64 = 12;
const TARGET_STREAM: u64 = 13;
const REPLICATE_STREAM: u64 = 14;

/// Smoothing-bias shifts at one target.
#[derive(Debug, Clone)]
pub(crate) struct TargetBias {
    pub value_shift: f64,
    /// Shift under the other value-bias formula, for comparison.
    pub value_shift_alt: f64,
    pub grad_shift: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct Target {
    pub x: Vec<f64>,
    pub pool_row: Option<usize>,
    pub truth: f64,
    pub grad_truth: Option<Vec<f64>>,
    pub bias: Option<TargetBias>,
}

/// Raw replicate estimates for one `(n, N)` cell. `None` marks a replicate
/// whose fit failed on the design (singular, empty neighbourhood, numeric).
pub(crate) struct CellRun {
    pub n: usize,
    pub big_n: usize,
    pub labeled_pool: usize,
    pub unlabeled_pool: usize,
    pub targets: Vec<Target>,
    pub conventional: Vec<Vec<Option<DVector<f64>>>>,
    pub ppi: Vec<Vec<Option<DVector<f64>>>>,
}

struct Pools {
    labeled: Dataset,
    unlabeled: Dataset,
    surface: Option<Surface>,
}

fn pool_size(n: usize, fraction: f64) -> usize {
    ((n as f64 / fraction) - 1e-9).ceil().max(n as f64) as usize
}

pub(crate) fn load_bundle_for(spec: &ExperimentSpec) -> Result<Option<LoadedBundle>> {
    match &spec.data {
        DataSource::Bundle { manifest } => {
            let b = load_bundle(manifest)?;
            if b.unlabeled.is_none() {
                return Err(Error::Schema {
                    field: "data.manifest".into(),
                    message: "bundle has no unlabeled file".into(),
                });
            }
            Ok(Some(b))
        }
        DataSource::Simulation { .. } => Ok(None),
    }
}

fn build_pools(spec: &ExperimentSpec, cell: usize, n: usize, big_n: usize, bundle: Option<&LoadedBundle>) -> Result<Pools> {
    match (&spec.data, bundle) {
        (DataSource::Simulation { noise_sd, surface, training_size }, _) => {
            let mut sim = SimulationSpec::new(
                pool_size(n, spec.subsample_fraction),
                pool_size(big_n, spec.subsample_fraction),
                *noise_sd,
                derive_seed(spec.seed, &[POOL_STREAM, cell as u64]),
            );
            sim.surface = *surface;
            let data = generate(&sim)?;
            let predictor_ref = spec.predictor.as_ref().expect("validated: simulation has a predictor");
            let training = match predictor_ref {
                crate::predictors::PredictorRef::Knn { .. } => {
                    let mut t = SimulationSpec::new(
                        *training_size,
                        1,
                        *noise_sd,
                        derive_seed(spec.seed, &[TRAINING_STREAM, cell as u64]),
                    );
                    t.surface = *surface;
                    Some(generate(&t)?.labeled.with_provenance(format!("experiment-training:cell={cell}")))
                }
                _ => None,
            };
            let predictor = Predictor::from_ref(predictor_ref, training)?;
            let labeled = predictor.attach(&data.labeled)?;
            let unlabeled = predictor.attach(&data.unlabeled.without_labels())?;
            if let Predictor::Knn(knn) = &predictor {
                knn.check_independence(&[&labeled, &unlabeled])?;
            }
            Ok(Pools {
                labeled,
                unlabeled,
                surface: Some(*surface),
            })
        }
        (DataSource::Bundle { .. }, Some(b)) => {
            let labeled = b.labeled.dataset.clone();
            let unlabeled = b.unlabeled.as_ref().expect("checked on load").dataset.without_labels();
            labeled.require_labels()?;
            labeled.require_predictions()?;
            unlabeled.require_predictions()?;
            Ok(Pools {
                labeled,
                unlabeled,
                surface: None,
            })
        }
        (DataSource::Bundle { .. }, None) => unreachable!("bundle loaded before the cells run"),
    }
}

fn select_targets(spec: &ExperimentSpec, cell: usize, pools: &Pools, moments: &KernelMoments, kernel: &KernelSpec) -> Result<Vec<Target>> {
    let mut rng = stream_rng(spec.seed, &[TARGET_STREAM, cell as u64]);
    let picks: Vec<(Vec<f64>, Option<usize>)> = match spec.target_source {
        TargetSource::LabeledPool => {
            if spec.n_targets > pools.labeled.len() {
                return Err(Error::input(format!(
                    "{} targets requested from a labeled pool of {}",
                    spec.n_targets,
                    pools.labeled.len()
                )));
            }
            index::sample(&mut rng, pools.labeled.len(), spec.n_targets)
                .into_iter()
                .map(|i| (pools.labeled.row(i), Some(i)))
                .collect()
        }
        TargetSource::Fresh => (0..spec.n_targets)
            .map(|_| ((0..SIM_DIM).map(|_| rng.sample(StandardNormal)).collect(), None))
            .collect(),
    };

    let h = spec.bandwidth;
    picks
        .into_iter()
        .map(|(x, pool_row)| {
            let (truth, grad_truth, bias) = match pools.surface {
                Some(surface) => {
                    let bias = if spec.bias_correction {
                        surface.local_derivatives(&x).ok().and_then(|d| {
                            let main = BiasTerms::from_derivatives(&d, h, moments, spec.bias_formula, BiasSource::Oracle).ok()?;
                            let alt = BiasTerms::from_derivatives(&d, h, moments, spec.bias_formula.other(), BiasSource::Oracle).ok()?;
                            Some(TargetBias {
                                value_shift: main.value_shift(),
                                value_shift_alt: alt.value_shift(),
                                grad_shift: main.b2,
                            })
                        })
                    } else {
                        None
                    };
                    (surface.value(&x), surface.gradient(&x).ok(), bias)
                }
                None => {
                    let row = pool_row.expect("bundle targets come from the pool");
                    let truth = pools.labeled.require_labels()?[row];
                    let bias = if spec.bias_correction {
                        let rest: Vec<usize> = (0..pools.labeled.len()).filter(|&i| i != row).collect();
                        let others = pools.labeled.select_rows(&rest);
                        let terms = |formula| plugin_bias_terms(&others, &x, h, kernel, formula).ok();
                        match (terms(spec.bias_formula), terms(spec.bias_formula.other())) {
                            (Some(main), Some(alt)) => Some(TargetBias {
                                value_shift: main.value_shift(),
                                value_shift_alt: alt.value_shift(),
                                grad_shift: main.b2,
                            }),
                            _ => None,
                        }
                    } else {
                        None
                    };
                    (truth, None, bias)
                }
            };
            Ok(Target {
                x,
                pool_row,
                truth,
                grad_truth,
                bias,
            })
        })
        .collect()
}

/// Row indices for one replicate drawn from `0..pool`, skipping `exclude`.
fn draw_rows(rng: &mut ChaCha8Rng, pool: usize, size: usize, exclude: Option<usize>, mode: Resampling) -> Result<Vec<usize>> {
    let avail = pool - usize::from(exclude.is_some());
    let shift = |i: usize| match exclude {
        Some(e) if i >= e => i + 1,
        _ => i,
    };
    match mode {
        Resampling::Subsample => {
            if size > avail {
                return Err(Error::input(format!("cannot subsample {size} rows from a pool of {avail}")));
            }
            Ok(index::sample(rng, avail, size).into_iter().map(shift).collect())
        }
        Resampling::Bootstrap => {
            if avail == 0 {
                return Err(Error::input("empty pool"));
            }
            Ok((0..size).map(|_| shift(rng.random_range(0..avail))).collect())
        }
    }
}

fn keep_design_failure(r: Result<DVector<f64>>) -> Result<Option<DVector<f64>>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(e) if e.is_design_failure() => Ok(None),
        Err(e) => Err(e),
    }
}

pub(crate) fn run_cell(spec: &ExperimentSpec, cell: usize, bundle: Option<&LoadedBundle>) -> Result<CellRun> {
    let (n, big_n) = spec.sizes[cell];
    let pools = build_pools(spec, cell, n, big_n, bundle)?;
    let kernel = KernelSpec::new(spec.kernel, pools.labeled.dim())?;
    let moments = kernel.moments()?;
    let targets = select_targets(spec, cell, &pools, &moments, &kernel)?;
    let estimator = LocalLinear::new(kernel, spec.bandwidth);

    let reps = spec.n_replicates;
    let outcomes: Vec<Result<(Option<DVector<f64>>, Option<DVector<f64>>)>> = (0..targets.len() * reps)
        .into_par_iter()
        .map(|job| {
            let (t, r) = (job / reps, job % reps);
            let target = &targets[t];
            let mut rng = stream_rng(spec.seed, &[REPLICATE_STREAM, cell as u64, t as u64, r as u64]);
            let lab_rows = draw_rows(&mut rng, pools.labeled.len(), n, target.pool_row, spec.resampling)?;
            let unl_rows = draw_rows(&mut rng, pools.unlabeled.len(), big_n, None, spec.resampling)?;
            let lab = pools.labeled.select_rows(&lab_rows);
            let unl = pools.unlabeled.select_rows(&unl_rows);
            match estimator.conventional_and_ppi(&lab, &unl, &target.x) {
                Ok((con, ppi)) => Ok((Some(con.theta()), keep_design_failure(ppi.map(|f| f.theta()))?)),
                Err(e) if e.is_design_failure() => Ok((None, None)),
                Err(e) => Err(e),
            }
        })
        .collect();

    let mut conventional = vec![Vec::with_capacity(reps); targets.len()];
    let mut ppi = vec![Vec::with_capacity(reps); targets.len()];
    for (job, outcome) in outcomes.into_iter().enumerate() {
        let (c, p) = outcome?;
        conventional[job / reps].push(c);
        ppi[job / reps].push(p);
    }
    Ok(CellRun {
        n,
        big_n,
        labeled_pool: pools.labeled.len(),
        unlabeled_pool: pools.unlabeled.len(),
        targets,
        conventional,
        ppi,
    })
}
