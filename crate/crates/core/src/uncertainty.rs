//! Bootstrap covariance, normal confidence intervals for the function value,
//! chi-square confidence ellipsoids for the gradient, smoothing-bias terms and
//! the leading-order coverage diagnostics.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimators::LocalFit;
use crate::kernels::{scaled_sq_distances, weight_vector, Bandwidth, KernelMoments, KernelSpec};
use crate::linalg::{symmetrize, GramSolver, sorted_symmetric_eigen};
use crate::rng::stream_rng;
use crate::special::{chi_square_cdf, chi_square_quantile, normal_quantile};

/// Largest tolerated fraction of failed bootstrap replicates.
pub const MAX_FAILED_REPLICATE_FRACTION: f64 = 0.2;

const BOOTSTRAP_STREAM: u64 = 0xB007;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMethod {
    Bootstrap,
    PluginAsymptotic,
}

/// Symmetric positive semi-definite `(p+1)×(p+1)` covariance of `θ̂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    #[serde(with = "crate::linalg::serde_rows")]
    pub matrix: DMatrix<f64>,
    pub n_boot: usize,
    pub n_failed: usize,
    pub method: CovarianceMethod,
}

impl CovarianceEstimate {
    pub fn new(matrix: DMatrix<f64>, n_boot: usize, n_failed: usize, method: CovarianceMethod) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::input("covariance must be a non-empty square matrix"));
        }
        let matrix = symmetrize(&matrix);
        let trace = matrix.trace();
        let (eig, _) = sorted_symmetric_eigen(&matrix);
        let min = eig[eig.len() - 1];
        if min < -1e-8 * trace.abs().max(f64::MIN_POSITIVE) {
            return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
        }
        Ok(Self {
            matrix,
            n_boot,
            n_failed,
            method,
        })
    }

    pub fn value_variance(&self) -> f64 {
        self.matrix[(0, 0)]
    }

    pub fn value_standard_error(&self) -> f64 {
        self.matrix[(0, 0)].max(0.0).sqrt()
    }

    /// Lower-right `p×p` block: covariance of the gradient estimate.
    pub fn gradient_block(&self) -> DMatrix<f64> {
        let p = self.matrix.nrows() - 1;
        self.matrix.view((1, 1), (p, p)).into_owned()
    }
}

/// Unbiased sample covariance of a list of equally long vectors.
pub fn sample_covariance(samples: &[DVector<f64>]) -> DMatrix<f64> {
    let k = samples.len();
    let dim = samples[0].len();
    let mean = samples.iter().fold(DVector::zeros(dim), |acc, s| acc + s) / k as f64;
    let mut cov = DMatrix::zeros(dim, dim);
    for s in samples {
        let d = s - &mean;
        cov += &d * d.transpose();
    }
    cov / (k.saturating_sub(1).max(1)) as f64
}

/// Bootstrap covariance of an estimator at one target point.
///
/// Each replicate resamples the labeled rows (and, when given, the unlabeled
/// rows) with replacement, independently and at their original sizes, then
/// refits. Replicate `b` draws from its own stream derived from `(seed, b)`,
/// so the result does not depend on the rayon worker count.
pub fn bootstrap_covariance<F>(
    fit_fn: F,
    labeled: &Dataset,
    unlabeled: Option<&Dataset>,
    n_boot: usize,
    seed: u64,
) -> Result<CovarianceEstimate>
where
    F: Fn(&Dataset, Option<&Dataset>) -> Result<LocalFit> + Sync,
{
    if n_boot < 2 {
        return Err(Error::input("bootstrap needs at least two replicates"));
    }
    if labeled.is_empty() || unlabeled.is_some_and(Dataset::is_empty) {
        return Err(Error::input("bootstrap datasets must be non-empty"));
    }
    let outcomes: Vec<Result<DVector<f64>>> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(seed, &[BOOTSTRAP_STREAM, b as u64]);
            let lab = resample(labeled, &mut rng);
            let unl = unlabeled.map(|u| resample(u, &mut rng));
            fit_fn(&lab, unl.as_ref()).map(|f| f.theta())
        })
        .collect();

    let mut thetas = Vec::with_capacity(n_boot);
    let mut failed = 0;
    for outcome in outcomes {
        match outcome {
            Ok(theta) => thetas.push(theta),
            Err(e) if e.is_design_failure() => failed += 1,
            Err(e) => return Err(e),
        }
    }
    if failed as f64 > MAX_FAILED_REPLICATE_FRACTION * n_boot as f64 || thetas.len() < 2 {
        return Err(Error::DegenerateResampling { failed, total: n_boot });
    }
    CovarianceEstimate::new(sample_covariance(&thetas), n_boot, failed, CovarianceMethod::Bootstrap)
}

fn resample<R: Rng>(data: &Dataset, rng: &mut R) -> Dataset {
    let n = data.len();
    let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    data.select_rows(&rows)
}

/// Leading-order conditional covariance of the conventional estimator,
/// `σ²/(n hᵖ f(x)) · diag(J₀, J₂/(μ₂²h²) I_p)`; a simulation-mode oracle.
pub fn plugin_asymptotic_covariance(
    moments: &KernelMoments,
    noise_variance: f64,
    n: usize,
    h: Bandwidth,
    density: f64,
) -> Result<CovarianceEstimate> {
    if !(density > 0.0) || n == 0 {
        return Err(Error::input("asymptotic covariance needs a positive density and n >= 1"));
    }
    let p = moments.dim;
    let h = h.value();
    let scale = noise_variance / (n as f64 * h.powi(p as i32) * density);
    let mut m = DMatrix::zeros(p + 1, p + 1);
    m[(0, 0)] = scale * moments.j0;
    for i in 1..=p {
        m[(i, i)] = scale * moments.j2 / (moments.mu2 * moments.mu2 * h * h);
    }
    CovarianceEstimate::new(m, 0, 0, CovarianceMethod::PluginAsymptotic)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasSource {
    Oracle,
    Plugin,
}

/// Which expression scales the function-value bias shift `h²·b1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasFormula {
    /// `b1 = ½ μ₂ Tr ∇²m(x)`: the density factor cancels in the leading term.
    #[default]
    HalfTrace,
    /// `b1 = f(x) μ₂ Tr ∇²m(x)`.
    DensityTrace,
}

impl BiasFormula {
    pub fn other(self) -> Self {
        match self {
            BiasFormula::HalfTrace => BiasFormula::DensityTrace,
            BiasFormula::DensityTrace => BiasFormula::HalfTrace,
        }
    }

    pub fn value_coefficient(self, moments: &KernelMoments, density: f64, hessian_trace: f64) -> f64 {
        match self {
            BiasFormula::HalfTrace => 0.5 * moments.mu2 * hessian_trace,
            BiasFormula::DensityTrace => density * moments.mu2 * hessian_trace,
        }
    }
}

/// Local derivative information feeding the bias terms. In simulation mode
/// these are analytic; in plug-in mode they are estimated.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalDerivatives {
    pub hessian: DMatrix<f64>,
    pub density: f64,
    pub density_gradient: Vec<f64>,
    /// `∇(Δm)(x)`; third-order term, `None` treats it as zero.
    pub laplacian_gradient: Option<Vec<f64>>,
}

/// Smoothing-bias coefficients: `h²·b1` shifts the value interval and `b2`
/// shifts the gradient region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasTerms {
    pub b1: f64,
    pub b2: Vec<f64>,
    pub h: Bandwidth,
    pub source: BiasSource,
    pub formula: BiasFormula,
}

impl BiasTerms {
    /// Assemble `b1` and `B₂ = h²/(2μ₂f)·b₁(m) + h²/(6μ₂)·b(m)` from local
    /// derivatives, using the fourth-moment identity of spherical kernels:
    /// `b₁(m) = μ₂₂(2∇²m ∇f + ∇f Tr∇²m) - μ₂² ∇f Tr∇²m` and
    /// `b(m) = 3μ₂₂ ∇(Δm)`.
    pub fn from_derivatives(
        derivs: &LocalDerivatives,
        h: Bandwidth,
        moments: &KernelMoments,
        formula: BiasFormula,
        source: BiasSource,
    ) -> Result<Self> {
        let p = moments.dim;
        if derivs.hessian.nrows() != p || derivs.hessian.ncols() != p || derivs.density_gradient.len() != p {
            return Err(Error::input("derivative shapes do not match the kernel dimension"));
        }
        if !(derivs.density > 0.0) {
            return Err(Error::PluginUnavailable(format!(
                "density estimate {} is not positive",
                derivs.density
            )));
        }
        let trace = derivs.hessian.trace();
        let grad_f = DVector::from_column_slice(&derivs.density_gradient);
        let mu22 = moments.mu22();
        let b1m = (&derivs.hessian * &grad_f) * (2.0 * mu22) + &grad_f * (trace * (mu22 - moments.mu2 * moments.mu2));
        let hh = h.value() * h.value();
        let mut b2 = b1m * (hh / (2.0 * moments.mu2 * derivs.density));
        if let Some(lg) = &derivs.laplacian_gradient {
            if lg.len() != p {
                return Err(Error::input("laplacian gradient has the wrong length"));
            }
            b2 += DVector::from_column_slice(lg) * (hh * 3.0 * mu22 / (6.0 * moments.mu2));
        }
        let b1 = formula.value_coefficient(moments, derivs.density, trace);
        if !b1.is_finite() || b2.iter().any(|v| !v.is_finite()) {
            return Err(Error::PluginUnavailable("non-finite bias terms".into()));
        }
        Ok(Self {
            b1,
            b2: b2.iter().copied().collect(),
            h,
            source,
            formula,
        })
    }

    /// Exact oracle terms supplied by the caller.
    pub fn oracle(b1: f64, b2: Vec<f64>, h: Bandwidth, formula: BiasFormula) -> Self {
        Self {
            b1,
            b2,
            h,
            source: BiasSource::Oracle,
            formula,
        }
    }

    /// `h²·b1`, subtracted from the function-value estimate.
    pub fn value_shift(&self) -> f64 {
        self.h.value() * self.h.value() * self.b1
    }
}

/// Plug-in bias terms: kernel density estimate of `f(x)`, finite-difference
/// density gradient and the Hessian from a kernel-weighted local quadratic
/// fit. Third-derivative terms are set to zero.
pub fn plugin_bias_terms(
    labeled: &Dataset,
    x: &[f64],
    h: Bandwidth,
    spec: &KernelSpec,
    formula: BiasFormula,
) -> Result<BiasTerms> {
    let p = x.len();
    let y = labeled.require_labels()?;
    let weights = weight_vector(labeled.features(), x, h, spec)?;
    let n_params = 1 + p + p * (p + 1) / 2;
    let sum_w = weights.sum();
    let sum_w2 = weights.dot(&weights);
    let n_effective = if sum_w2 > 0.0 { sum_w * sum_w / sum_w2 } else { 0.0 };
    if n_effective < ((p + 1) * (p + 2) / 2) as f64 {
        return Err(Error::PluginUnavailable(format!(
            "effective local sample size {n_effective:.1} is below the {n_params} quadratic coefficients"
        )));
    }

    // design: 1, d_j, d_j d_k (j <= k)
    let n = labeled.len();
    let feats = labeled.features();
    let mut design = DMatrix::zeros(n, n_params);
    for i in 0..n {
        design[(i, 0)] = 1.0;
        let mut col = 1 + p;
        for j in 0..p {
            let dj = feats[(i, j)] - x[j];
            design[(i, 1 + j)] = dj;
            for k in j..p {
                design[(i, col)] = dj * (feats[(i, k)] - x[k]);
                col += 1;
            }
        }
    }
    let mut weighted = design.clone();
    for (i, mut row) in weighted.row_iter_mut().enumerate() {
        row *= weights[i];
    }
    let gram = symmetrize(&design.tr_mul(&weighted));
    let solver = GramSolver::new(gram, 1e12)
        .map_err(|e| Error::PluginUnavailable(format!("local quadratic fit failed: {e}")))?;
    let coef = solver
        .solve(&weighted.tr_mul(y))
        .map_err(|e| Error::PluginUnavailable(e.to_string()))?;

    let mut hessian = DMatrix::zeros(p, p);
    let mut col = 1 + p;
    for j in 0..p {
        for k in j..p {
            if j == k {
                hessian[(j, j)] = 2.0 * coef[col];
            } else {
                hessian[(j, k)] = coef[col];
                hessian[(k, j)] = coef[col];
            }
            col += 1;
        }
    }

    let density = kde(labeled, x, h, spec);
    let step = 1e-4 * h.value();
    let density_gradient = (0..p)
        .map(|j| {
            let mut hi = x.to_vec();
            let mut lo = x.to_vec();
            hi[j] += step;
            lo[j] -= step;
            (kde(labeled, &hi, h, spec) - kde(labeled, &lo, h, spec)) / (2.0 * step)
        })
        .collect();
    let derivs = LocalDerivatives {
        hessian,
        density,
        density_gradient,
        laplacian_gradient: None,
    };
    BiasTerms::from_derivatives(&derivs, h, &spec.moments()?, formula, BiasSource::Plugin)
}

/// Kernel density estimate `(n hᵖ)⁻¹ Σ K((X_i - x)/h)`.
pub fn kde(data: &Dataset, x: &[f64], h: Bandwidth, spec: &KernelSpec) -> f64 {
    let n = data.len() as f64;
    let d2 = scaled_sq_distances(data.features(), x, h);
    d2.iter().map(|&v| spec.eval_sq_norm(v)).sum::<f64>() / (n * h.value().powi(x.len() as i32))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    pub alpha: f64,
    pub bias_corrected: bool,
    /// The point estimate the interval was built around (before any shift).
    pub center: f64,
    /// True when the standard error was zero and the interval collapsed.
    pub degenerate: bool,
}

impl ConfidenceInterval {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::input(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// Normal interval `center - shift ± z_{1-α/2}·se`.
pub fn normal_interval(center: f64, se: f64, alpha: f64, shift: Option<f64>) -> Result<ConfidenceInterval> {
    check_alpha(alpha)?;
    if !(se >= 0.0) {
        return Err(Error::input(format!("standard error must be nonnegative, got {se}")));
    }
    let mid = center - shift.unwrap_or(0.0);
    let half = normal_quantile(1.0 - alpha / 2.0) * se;
    Ok(ConfidenceInterval {
        lower: mid - half,
        upper: mid + half,
        alpha,
        bias_corrected: shift.is_some(),
        center,
        degenerate: se == 0.0,
    })
}

/// Confidence interval for `m(x)`; with bias terms the interval is shifted by
/// `-h²·b1`.
pub fn ci_value(
    fit: &LocalFit,
    cov: &CovarianceEstimate,
    alpha: f64,
    bias: Option<&BiasTerms>,
) -> Result<ConfidenceInterval> {
    let var = cov.value_variance();
    if !(var >= 0.0) {
        return Err(Error::input(format!("value variance must be nonnegative, got {var}")));
    }
    normal_interval(fit.m_hat, var.sqrt(), alpha, bias.map(BiasTerms::value_shift))
}

/// Ellipsoidal confidence region for `∇m(x)`:
/// `(v - c - s)ᵀ Σ⁻¹ (v - c - s) ≤ χ²_p(1-α)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRegion {
    pub center: Vec<f64>,
    /// Inverse of the gradient covariance.
    #[serde(with = "crate::linalg::serde_rows")]
    pub shape: DMatrix<f64>,
    #[serde(with = "crate::linalg::serde_rows")]
    pub covariance: DMatrix<f64>,
    pub radius_sq: f64,
    pub alpha: f64,
    pub bias_shift: Option<Vec<f64>>,
}

impl ConfidenceRegion {
    fn effective_center(&self) -> DVector<f64> {
        let c = DVector::from_column_slice(&self.center);
        match &self.bias_shift {
            Some(s) => c - DVector::from_column_slice(s),
            None => c,
        }
    }

    pub fn mahalanobis_sq(&self, v: &[f64]) -> f64 {
        let d = DVector::from_column_slice(v) - self.effective_center();
        (d.transpose() * &self.shape * &d)[(0, 0)]
    }

    pub fn contains(&self, v: &[f64]) -> bool {
        self.mahalanobis_sq(v) <= self.radius_sq
    }

    /// Point on the boundary in the direction `u` (any nonzero vector) of the
    /// whitened coordinates.
    pub fn boundary_point(&self, u: &[f64]) -> Vec<f64> {
        let u = DVector::from_column_slice(u);
        let u = &u / u.norm();
        let l = Cholesky::new(self.covariance.clone())
            .expect("region covariance is positive definite")
            .l();
        let v = self.effective_center() + l * u * self.radius_sq.sqrt();
        v.iter().copied().collect()
    }
}

pub fn region_gradient(
    fit: &LocalFit,
    cov_grad: &DMatrix<f64>,
    alpha: f64,
    bias: Option<&BiasTerms>,
) -> Result<ConfidenceRegion> {
    check_alpha(alpha)?;
    let p = fit.grad_hat.len();
    if cov_grad.nrows() != p || cov_grad.ncols() != p {
        return Err(Error::input("gradient covariance has the wrong shape"));
    }
    let covariance = symmetrize(cov_grad);
    let (eig, _) = sorted_symmetric_eigen(&covariance);
    let min = eig[p - 1];
    let chol = match Cholesky::new(covariance.clone()) {
        Some(c) if min > 0.0 => c,
        _ => return Err(Error::NotPositiveDefinite { min_eigenvalue: min }),
    };
    let bias_shift = match bias {
        Some(b) if b.b2.len() != p => return Err(Error::input("bias vector has the wrong length")),
        Some(b) => Some(b.b2.clone()),
        None => None,
    };
    Ok(ConfidenceRegion {
        center: fit.grad_hat.clone(),
        shape: symmetrize(&chol.inverse()),
        covariance,
        radius_sq: chi_square_quantile(p as u32, 1.0 - alpha),
        alpha,
        bias_shift,
    })
}

/// Leading-order coverage of the uncorrected value interval,
/// `(1-α)(1 - h⁴ b1² / (8 σ₁₁²))`.
pub fn theoretical_coverage_single(alpha: f64, h: Bandwidth, sigma11: f64, b1: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(sigma11 > 0.0) {
        return Err(Error::input("sigma11 must be positive"));
    }
    let h4 = h.value().powi(4);
    Ok((1.0 - alpha) * (1.0 - h4 * b1 * b1 / (8.0 * sigma11 * sigma11)))
}

/// `c₁ = ∫_{χ²_p(1-α)}^{χ²_{p+2}(1-α)}` of the `χ²_{p+2}` density.
pub fn coverage_constant_c1(p: u32, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if p == 0 {
        return Err(Error::input("dimension must be at least 1"));
    }
    let lo = chi_square_quantile(p, 1.0 - alpha);
    let hi = chi_square_quantile(p + 2, 1.0 - alpha);
    Ok(chi_square_cdf(p + 2, hi) - chi_square_cdf(p + 2, lo))
}

/// Leading-order coverage of the uncorrected gradient region,
/// `(1-α)(1 + (½ - c₁) Σ b_i²)` for standardized bias `b`.
pub fn theoretical_coverage_multi(alpha: f64, p: u32, b: &[f64]) -> Result<f64> {
    let c1 = coverage_constant_c1(p, alpha)?;
    let s: f64 = b.iter().map(|v| v * v).sum();
    Ok((1.0 - alpha) * (1.0 + (0.5 - c1) * s))
}
