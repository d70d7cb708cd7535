use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::uncertainty::LocalDerivatives;

/// Covariate dimension of the simulation.
pub const SIM_DIM: usize = 10;

const FEATURE_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const LINEAR: [f64; 4] = [-1.0, -0.5, 0.5, 1.0];

/// Regression surface used by the generator. `Piecewise` is the main
/// benchmark; the others have closed-form local behaviour and serve as
/// controls (the local linear fit is exact on `Linear`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Surface {
    #[default]
    Piecewise,
    /// `-x₄ - 0.5x₅ + 0.5x₆ + x₇`.
    Linear,
    /// `½‖x‖²`.
    Quadratic,
}

fn check_len(x: &[f64]) {
    assert_eq!(x.len(), SIM_DIM, "simulation points have {SIM_DIM} coordinates");
}

fn linear_part(x: &[f64]) -> f64 {
    LINEAR.iter().zip(&x[3..7]).map(|(c, v)| c * v).sum()
}

fn m2(x3: f64) -> f64 {
    if x3 <= 0.0 {
        x3 * (PI * x3).cos()
    } else {
        (PI * x3).sin()
    }
}

/// First three derivatives of the one-dimensional piece away from zero.
fn m2_derivatives(x3: f64) -> (f64, f64, f64) {
    let (s, c) = (PI * x3).sin_cos();
    if x3 < 0.0 {
        (
            c - PI * x3 * s,
            -2.0 * PI * s - PI * PI * x3 * c,
            -3.0 * PI * PI * c + PI.powi(3) * x3 * s,
        )
    } else {
        (PI * c, -PI * PI * s, -PI.powi(3) * c)
    }
}

/// `m(x) = |x₁x₂| + m₂(x₃) + (-x₄ - 0.5x₅ + 0.5x₆ + x₇)`, where
/// `m₂(t) = t·cos(πt)` for `t ≤ 0` and `sin(πt)` otherwise. Coordinates
/// 8 to 10 do not enter. Panics unless `x` has ten coordinates.
pub fn simulate_m(x: &[f64]) -> f64 {
    Surface::Piecewise.value(x)
}

fn check_differentiable(x: &[f64]) -> Result<()> {
    if x[0] * x[1] == 0.0 {
        let coordinate = if x[0] == 0.0 { 1 } else { 2 };
        return Err(Error::Nondifferentiable { coordinate });
    }
    if x[2] == 0.0 {
        return Err(Error::Nondifferentiable { coordinate: 3 });
    }
    Ok(())
}

/// Analytic gradient of [`simulate_m`]; fails on the kinks `x₁x₂ = 0` and
/// `x₃ = 0` with the offending 1-based coordinate.
pub fn simulate_gradient(x: &[f64]) -> Result<Vec<f64>> {
    Surface::Piecewise.gradient(x)
}

pub fn simulate_hessian(x: &[f64]) -> Result<DMatrix<f64>> {
    Surface::Piecewise.hessian(x)
}

/// `∇(Δm)(x)`.
pub fn simulate_laplacian_gradient(x: &[f64]) -> Result<Vec<f64>> {
    Surface::Piecewise.laplacian_gradient(x)
}

/// Density of `N(0, I_p)` and its gradient.
pub fn standard_normal_density(x: &[f64]) -> (f64, Vec<f64>) {
    let p = x.len() as i32;
    let sq: f64 = x.iter().map(|v| v * v).sum();
    let f = (2.0 * PI).powf(-0.5 * p as f64) * (-0.5 * sq).exp();
    (f, x.iter().map(|v| -v * f).collect())
}

impl Surface {
    pub fn value(self, x: &[f64]) -> f64 {
        check_len(x);
        match self {
            Surface::Piecewise => (x[0] * x[1]).abs() + m2(x[2]) + linear_part(x),
            Surface::Linear => linear_part(x),
            Surface::Quadratic => 0.5 * x.iter().map(|v| v * v).sum::<f64>(),
        }
    }

    pub fn gradient(self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(x);
        let mut g = vec![0.0; SIM_DIM];
        match self {
            Surface::Piecewise => {
                check_differentiable(x)?;
                let s = (x[0] * x[1]).signum();
                g[0] = s * x[1];
                g[1] = s * x[0];
                g[2] = m2_derivatives(x[2]).0;
                g[3..7].copy_from_slice(&LINEAR);
            }
            Surface::Linear => g[3..7].copy_from_slice(&LINEAR),
            Surface::Quadratic => g.copy_from_slice(x),
        }
        Ok(g)
    }

    pub fn hessian(self, x: &[f64]) -> Result<DMatrix<f64>> {
        check_len(x);
        let mut h = DMatrix::zeros(SIM_DIM, SIM_DIM);
        match self {
            Surface::Piecewise => {
                check_differentiable(x)?;
                let s = (x[0] * x[1]).signum();
                h[(0, 1)] = s;
                h[(1, 0)] = s;
                h[(2, 2)] = m2_derivatives(x[2]).1;
            }
            Surface::Linear => {}
            Surface::Quadratic => h.fill_with_identity(),
        }
        Ok(h)
    }

    pub fn laplacian_gradient(self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(x);
        let mut g = vec![0.0; SIM_DIM];
        if self == Surface::Piecewise {
            check_differentiable(x)?;
            g[2] = m2_derivatives(x[2]).2;
        }
        Ok(g)
    }

    /// Exact local derivatives under standard normal covariates, for oracle
    /// bias terms.
    pub fn local_derivatives(self, x: &[f64]) -> Result<LocalDerivatives> {
        let (density, density_gradient) = standard_normal_density(x);
        Ok(LocalDerivatives {
            hessian: self.hessian(x)?,
            density,
            density_gradient,
            laplacian_gradient: Some(self.laplacian_gradient(x)?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub noise_sd: f64,
    pub seed: u64,
    #[serde(default)]
    pub surface: Surface,
}

impl SimulationSpec {
    pub fn new(n_labeled: usize, n_unlabeled: usize, noise_sd: f64, seed: u64) -> Self {
        Self {
            n_labeled,
            n_unlabeled,
            noise_sd,
            seed,
            surface: Surface::Piecewise,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_labeled == 0 || self.n_unlabeled == 0 {
            return Err(Error::input("simulation sizes must be at least 1"));
        }
        if !(self.noise_sd >= 0.0) || !self.noise_sd.is_finite() {
            return Err(Error::input(format!("noise_sd must be finite and nonnegative, got {}", self.noise_sd)));
        }
        Ok(())
    }
}

/// Ground truth for the generated rows: `m(X_i)` and, where defined,
/// `∇m(X_i)` (rows at a kink hold NaN).
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub m: DVector<f64>,
    pub gradient: DMatrix<f64>,
}

impl Truth {
    fn of(surface: Surface, features: &DMatrix<f64>) -> Self {
        let n = features.nrows();
        let mut m = DVector::zeros(n);
        let mut gradient = DMatrix::from_element(n, SIM_DIM, f64::NAN);
        for i in 0..n {
            let row: Vec<f64> = features.row(i).iter().copied().collect();
            m[i] = surface.value(&row);
            if let Ok(g) = surface.gradient(&row) {
                for (j, v) in g.into_iter().enumerate() {
                    gradient[(i, j)] = v;
                }
            }
        }
        Self { m, gradient }
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub labeled: Dataset,
    pub unlabeled: Dataset,
    /// Kept apart from the datasets so estimators never see it.
    pub labeled_truth: Truth,
    pub unlabeled_truth: Truth,
}

/// Draw both pools with i.i.d. `N(0, I₁₀)` covariates and labels
/// `m(X) + ε`, `ε ~ N(0, noise_sd²)`. Unlabeled rows also carry labels
/// (generated the same way) so they can serve as held-out data; strip them
/// before inference if needed.
pub fn generate(spec: &SimulationSpec) -> Result<SimulatedData> {
    spec.validate()?;
    let draw = |pool: u64, n: usize| {
        let mut rng = stream_rng(spec.seed, &[pool, FEATURE_STREAM]);
        let mut rows = DMatrix::zeros(n, SIM_DIM);
        for i in 0..n {
            for j in 0..SIM_DIM {
                rows[(i, j)] = rng.sample(StandardNormal);
            }
        }
        let truth = Truth::of(spec.surface, &rows);
        let mut rng = stream_rng(spec.seed, &[pool, NOISE_STREAM]);
        let labels = DVector::from_iterator(
            n,
            truth.m.iter().map(|&m| m + spec.noise_sd * rng.sample::<f64, _>(StandardNormal)),
        );
        let tag = format!("simulation:seed={}", spec.seed);
        let data = Dataset::new(rows).with_labels(labels).map(|d| d.with_provenance(tag));
        data.map(|d| (d, truth))
    };
    let (labeled, labeled_truth) = draw(0, spec.n_labeled)?;
    let (unlabeled, unlabeled_truth) = draw(1, spec.n_unlabeled)?;
    Ok(SimulatedData {
        labeled,
        unlabeled,
        labeled_truth,
        unlabeled_truth,
    })
}
