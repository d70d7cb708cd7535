//! Local linear estimators of `m(x)` and `∇m(x)`: the conventional weighted
//! least squares fit, the prediction-powered fit with a rectifier, and the
//! regularized high-dimensional rectifier.
//!
//! The augmented design row for observation `i` is `(1, X_i - x)`; the first
//! coefficient estimates the function value and the remaining `p` estimate the
//! gradient. Coordinates are not divided by `h`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{DatasetRole, Error, Result};
use crate::kernels::{scaled_sq_distances, Bandwidth, KernelSpec};
use crate::linalg::GramSolver;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Conventional,
    Ppi,
    PpiHd,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Conventional => "conventional",
            Method::Ppi => "ppi",
            Method::PpiHd => "ppi_hd",
        }
    }
}

/// Estimated function value and gradient at one target point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalFit {
    pub m_hat: f64,
    pub grad_hat: Vec<f64>,
    pub target: Vec<f64>,
    pub method: Method,
    /// Sum of kernel weights of the dataset the fit was solved on.
    pub effective_weight_mass: f64,
}

impl LocalFit {
    fn from_theta(theta: &DVector<f64>, target: &[f64], method: Method, mass: f64) -> Result<Self> {
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                what: "local linear solve",
                residual: f64::NAN,
            });
        }
        Ok(Self {
            m_hat: theta[0],
            grad_hat: theta.iter().skip(1).copied().collect(),
            target: target.to_vec(),
            method,
            effective_weight_mass: mass,
        })
    }

    /// `(m_hat, grad_hat)` stacked into one `(p+1)`-vector.
    pub fn theta(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.grad_hat.len() + 1,
            std::iter::once(self.m_hat).chain(self.grad_hat.iter().copied()),
        )
    }
}

/// Correction for predictor bias, fitted on the labeled set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rectifier {
    pub delta: Vec<f64>,
    pub n_used: usize,
    /// Regularization weight of the high-dimensional variant.
    pub t: Option<f64>,
}

impl Rectifier {
    pub fn as_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.delta)
    }
}

/// Numeric guards for the local solves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Largest accepted eigenvalue ratio of the weighted Gram matrix.
    pub condition_threshold: f64,
    /// Smallest accepted kernel weight mass, in units of the kernel peak `K(0)`.
    pub min_weight_mass: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            condition_threshold: 1e12,
            min_weight_mass: 1e-12,
        }
    }
}

/// Which estimator to run; used wherever a fit has to be repeated, e.g. by
/// the bootstrap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Estimator {
    Conventional,
    Ppi,
    /// `t = None` selects [`default_hd_t`].
    Hd { t: Option<f64> },
}

impl Estimator {
    pub fn method(&self) -> Method {
        match self {
            Estimator::Conventional => Method::Conventional,
            Estimator::Ppi => Method::Ppi,
            Estimator::Hd { .. } => Method::PpiHd,
        }
    }

    pub fn needs_unlabeled(&self) -> bool {
        !matches!(self, Estimator::Conventional)
    }
}

/// Default HD regularization weight: `t = 0.01 n / N`, so that `tN/n = 0.01`.
pub fn default_hd_t(n_labeled: usize, n_unlabeled: usize) -> f64 {
    0.01 * n_labeled as f64 / n_unlabeled.max(1) as f64
}

/// Kernel-weighted augmented design around one target point.
struct LocalDesign {
    weights: DVector<f64>,
    centered: DMatrix<f64>,
    weighted: DMatrix<f64>,
    mass: f64,
}

impl LocalDesign {
    fn new(features: &DMatrix<f64>, x: &[f64], h: Bandwidth, kernel: &KernelSpec) -> Result<Self> {
        if features.ncols() != x.len() || kernel.dim != x.len() {
            return Err(Error::input(format!(
                "feature width {}, target length {} and kernel dimension {} disagree",
                features.ncols(),
                x.len(),
                kernel.dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("target point has non-finite coordinates"));
        }
        let d2 = scaled_sq_distances(features, x, h);
        let weights = d2.map(|v| kernel.eval_sq_norm(v));
        let mut centered = features.clone();
        for (j, mut col) in centered.column_iter_mut().enumerate() {
            col.add_scalar_mut(-x[j]);
        }
        let mut weighted = centered.clone();
        for mut col in weighted.column_iter_mut() {
            col.component_mul_assign(&weights);
        }
        let mass = weights.sum();
        Ok(Self {
            weights,
            centered,
            weighted,
            mass,
        })
    }

    fn n(&self) -> usize {
        self.weights.len()
    }

    /// `X W Xᵀ` for the augmented design.
    fn gram(&self) -> DMatrix<f64> {
        let p = self.centered.ncols();
        let mut g = DMatrix::zeros(p + 1, p + 1);
        g[(0, 0)] = self.mass;
        for j in 0..p {
            let s = self.weighted.column(j).sum();
            g[(0, j + 1)] = s;
            g[(j + 1, 0)] = s;
        }
        let block = self.centered.tr_mul(&self.weighted);
        g.view_mut((1, 1), (p, p)).copy_from(&crate::linalg::symmetrize(&block));
        g
    }

    /// `X W y` for the augmented design.
    fn cross(&self, y: &DVector<f64>) -> DVector<f64> {
        let p = self.centered.ncols();
        let mut out = DVector::zeros(p + 1);
        out[0] = self.weights.dot(y);
        let tail = self.weighted.tr_mul(y);
        out.rows_mut(1, p).copy_from(&tail);
        out
    }

    fn check_mass(&self, kernel: &KernelSpec, opts: &FitOptions) -> Result<()> {
        let rel = self.mass / kernel.peak();
        if !(rel >= opts.min_weight_mass) {
            return Err(Error::EmptyNeighborhood { mass: rel, role: None });
        }
        Ok(())
    }

    fn solver(&self, kernel: &KernelSpec, opts: &FitOptions) -> Result<GramSolver> {
        self.check_mass(kernel, opts)?;
        let params = self.centered.ncols() + 1;
        if self.n() < params {
            return Err(Error::SingularDesign {
                condition: f64::INFINITY,
                threshold: opts.condition_threshold,
                role: None,
            });
        }
        GramSolver::new(self.gram(), opts.condition_threshold)
    }
}

/// Local linear estimation with a fixed kernel and bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalLinear {
    pub kernel: KernelSpec,
    pub bandwidth: Bandwidth,
    #[serde(default)]
    pub options: FitOptions,
}

impl LocalLinear {
    pub fn new(kernel: KernelSpec, bandwidth: Bandwidth) -> Self {
        Self {
            kernel,
            bandwidth,
            options: FitOptions::default(),
        }
    }

    pub fn with_options(mut self, options: FitOptions) -> Self {
        self.options = options;
        self
    }

    fn design(&self, data: &Dataset, x: &[f64]) -> Result<LocalDesign> {
        LocalDesign::new(data.features(), x, self.bandwidth, &self.kernel)
    }

    /// Weighted least squares solve of `y` on the augmented design.
    fn solve_on(&self, data: &Dataset, y: &DVector<f64>, x: &[f64], role: DatasetRole) -> Result<(DVector<f64>, f64)> {
        let design = self.design(data, x)?;
        let solver = design
            .solver(&self.kernel, &self.options)
            .map_err(|e| e.with_role(role))?;
        Ok((solver.solve(&design.cross(y))?, design.mass))
    }

    /// `θ̂ = (XWXᵀ)⁻¹XWY` on the labeled set.
    pub fn conventional_fit(&self, labeled: &Dataset, x: &[f64]) -> Result<LocalFit> {
        let y = labeled.require_labels()?;
        let (theta, mass) = self.solve_on(labeled, y, x, DatasetRole::Labeled)?;
        LocalFit::from_theta(&theta, x, Method::Conventional, mass)
    }

    /// Local linear fit on the predictions of `data`, treated as responses.
    pub fn pseudo_label_fit(&self, data: &Dataset, x: &[f64]) -> Result<(DVector<f64>, f64)> {
        let f = data.require_predictions()?;
        self.solve_on(data, f, x, DatasetRole::Unlabeled)
    }

    /// `Δ = (XWXᵀ)⁻¹XW(F(X) - Y)` on the labeled set.
    pub fn compute_rectifier(&self, labeled: &Dataset, x: &[f64]) -> Result<Rectifier> {
        let residual = prediction_residual(labeled)?;
        let (delta, _) = self.solve_on(labeled, &residual, x, DatasetRole::Labeled)?;
        Ok(Rectifier {
            delta: delta.iter().copied().collect(),
            n_used: labeled.len(),
            t: None,
        })
    }

    /// Pseudo-label fit on `unlabeled` minus the labeled-set rectifier.
    pub fn ppi_fit(&self, labeled: &Dataset, unlabeled: &Dataset, x: &[f64]) -> Result<LocalFit> {
        let rectifier = self.compute_rectifier(labeled, x)?;
        let (pseudo, mass) = self.pseudo_label_fit(unlabeled, x)?;
        LocalFit::from_theta(&(pseudo - rectifier.as_vector()), x, Method::Ppi, mass)
    }

    /// `Δᴴᴰ(t) = (1 + tN/n)(XWXᵀ + t X̃W̃X̃ᵀ)⁻¹ XW(Y_F - Y)`.
    pub fn hd_rectifier(&self, labeled: &Dataset, unlabeled: &Dataset, x: &[f64], t: f64) -> Result<Rectifier> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::input(format!("HD regularization weight must be positive, got {t}")));
        }
        let residual = prediction_residual(labeled)?;
        let lab = self.design(labeled, x)?;
        let unl = self.design(unlabeled, x)?;
        let combined_mass = (lab.mass + t * unl.mass) / self.kernel.peak();
        if !(combined_mass >= self.options.min_weight_mass) {
            return Err(Error::EmptyNeighborhood {
                mass: combined_mass,
                role: Some(DatasetRole::Regularized),
            });
        }
        let gram = lab.gram() + unl.gram() * t;
        let solver = GramSolver::new(gram, self.options.condition_threshold)
            .map_err(|e| e.with_role(DatasetRole::Regularized))?;
        let scale = 1.0 + t * unlabeled.len() as f64 / labeled.len().max(1) as f64;
        let delta = solver.solve(&lab.cross(&residual))? * scale;
        Ok(Rectifier {
            delta: delta.iter().copied().collect(),
            n_used: labeled.len(),
            t: Some(t),
        })
    }

    /// Pseudo-label fit on `unlabeled` minus `Δᴴᴰ(t)`.
    pub fn hd_fit(&self, labeled: &Dataset, unlabeled: &Dataset, x: &[f64], t: f64) -> Result<LocalFit> {
        let rectifier = self.hd_rectifier(labeled, unlabeled, x, t)?;
        let (pseudo, mass) = self.pseudo_label_fit(unlabeled, x)?;
        LocalFit::from_theta(&(pseudo - rectifier.as_vector()), x, Method::PpiHd, mass)
    }

    /// Dispatch on an [`Estimator`].
    pub fn fit(&self, estimator: Estimator, labeled: &Dataset, unlabeled: Option<&Dataset>, x: &[f64]) -> Result<LocalFit> {
        match estimator {
            Estimator::Conventional => self.conventional_fit(labeled, x),
            Estimator::Ppi | Estimator::Hd { .. } => {
                let unlabeled = unlabeled.ok_or_else(|| Error::input("this estimator needs an unlabeled dataset"))?;
                match estimator {
                    Estimator::Ppi => self.ppi_fit(labeled, unlabeled, x),
                    Estimator::Hd { t } => {
                        let t = t.unwrap_or_else(|| default_hd_t(labeled.len(), unlabeled.len()));
                        self.hd_fit(labeled, unlabeled, x, t)
                    }
                    Estimator::Conventional => unreachable!(),
                }
            }
        }
    }

    /// Conventional and prediction-powered fits sharing one factorization of
    /// the labeled Gram matrix. A labeled-side failure fails both; the inner
    /// result carries failures of the unlabeled pseudo-label fit.
    pub fn conventional_and_ppi(
        &self,
        labeled: &Dataset,
        unlabeled: &Dataset,
        x: &[f64],
    ) -> Result<(LocalFit, Result<LocalFit>)> {
        let y = labeled.require_labels()?;
        let residual = prediction_residual(labeled)?;
        let design = self.design(labeled, x)?;
        let solver = design
            .solver(&self.kernel, &self.options)
            .map_err(|e| e.with_role(DatasetRole::Labeled))?;
        let theta = solver.solve(&design.cross(y))?;
        let delta = solver.solve(&design.cross(&residual))?;
        let con = LocalFit::from_theta(&theta, x, Method::Conventional, design.mass)?;
        let ppi = self
            .pseudo_label_fit(unlabeled, x)
            .and_then(|(pseudo, mass)| LocalFit::from_theta(&(pseudo - delta), x, Method::Ppi, mass));
        Ok((con, ppi))
    }
}

fn prediction_residual(labeled: &Dataset) -> Result<DVector<f64>> {
    let y = labeled.require_labels()?;
    let f = labeled.require_predictions()?;
    Ok(f - y)
}
