//! Spherically symmetric kernels, their moment constants, kernel weights and
//! the rule-of-thumb bandwidth.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;
use crate::special::ln_gamma;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    /// Standard multivariate normal density.
    #[default]
    Gaussian,
    /// `c_p (1 - |u|^2)` on the unit ball, zero outside.
    #[serde(alias = "epanechnikov-spherical")]
    Epanechnikov,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub dim: usize,
}

/// Moment constants of a kernel.
///
/// `mu2 = ∫u₁²K`, `mu4 = ∫u₁⁴K`, `j0 = ∫K²`, `j2 = ∫u₁²K²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelMoments {
    pub mu2: f64,
    pub mu4: f64,
    pub j0: f64,
    pub j2: f64,
    pub dim: usize,
}

impl KernelMoments {
    /// `∫u₁²u₂²K`, which equals `mu4 / 3` for any spherically symmetric kernel.
    pub fn mu22(&self) -> f64 {
        self.mu4 / 3.0
    }
}

const MOMENT_REL_TOL: f64 = 1e-10;
const GAUSSIAN_RADIUS: f64 = 40.0;

impl KernelSpec {
    pub fn new(family: KernelFamily, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::input("kernel dimension must be at least 1"));
        }
        Ok(Self { family, dim })
    }

    pub fn gaussian(dim: usize) -> Self {
        Self::new(KernelFamily::Gaussian, dim).expect("dimension must be positive")
    }

    pub fn epanechnikov(dim: usize) -> Self {
        Self::new(KernelFamily::Epanechnikov, dim).expect("dimension must be positive")
    }

    fn normalizer(&self) -> f64 {
        let p = self.dim as f64;
        match self.family {
            KernelFamily::Gaussian => (2.0 * PI).powf(-p / 2.0),
            KernelFamily::Epanechnikov => {
                let ln_ball = 0.5 * p * PI.ln() - ln_gamma(0.5 * p + 1.0);
                0.5 * (p + 2.0) * (-ln_ball).exp()
            }
        }
    }

    /// Kernel value as a function of the squared norm `|u|²`.
    #[inline]
    pub fn eval_sq_norm(&self, sq_norm: f64) -> f64 {
        self.normalizer() * self.unnormalized(sq_norm)
    }

    #[inline]
    fn unnormalized(&self, sq_norm: f64) -> f64 {
        match self.family {
            KernelFamily::Gaussian => (-0.5 * sq_norm).exp(),
            KernelFamily::Epanechnikov => {
                if sq_norm < 1.0 {
                    1.0 - sq_norm
                } else {
                    0.0
                }
            }
        }
    }

    pub fn eval(&self, u: &[f64]) -> Result<f64> {
        if u.len() != self.dim {
            return Err(Error::input(format!(
                "kernel of dimension {} evaluated at a vector of length {}",
                self.dim,
                u.len()
            )));
        }
        Ok(self.eval_sq_norm(u.iter().map(|v| v * v).sum()))
    }

    /// `K(0)`, the largest value the kernel takes.
    pub fn peak(&self) -> f64 {
        self.normalizer()
    }

    /// Radius outside which the kernel vanishes (or is negligible for the
    /// gaussian family).
    fn support_radius(&self) -> f64 {
        match self.family {
            KernelFamily::Gaussian => GAUSSIAN_RADIUS,
            KernelFamily::Epanechnikov => 1.0,
        }
    }

    /// Moment constants; closed form for the gaussian family, radial
    /// quadrature otherwise.
    pub fn moments(&self) -> Result<KernelMoments> {
        match self.family {
            KernelFamily::Gaussian => {
                let j0 = (4.0 * PI).powf(-(self.dim as f64) / 2.0);
                Ok(KernelMoments {
                    mu2: 1.0,
                    mu4: 3.0,
                    j0,
                    j2: 0.5 * j0,
                    dim: self.dim,
                })
            }
            KernelFamily::Epanechnikov => self.moments_by_quadrature(),
        }
    }

    /// Moments from one-dimensional radial integrals, valid for any spherically
    /// symmetric kernel: `∫g(|u|)du = S_{p-1} ∫ r^{p-1} g(r) dr` and
    /// `E[u₁² | |u| = r] = r²/p`, `E[u₁⁴ | |u| = r] = 3r⁴/(p(p+2))`.
    pub fn moments_by_quadrature(&self) -> Result<KernelMoments> {
        let p = self.dim as f64;
        let surface = 2.0 * (0.5 * p * PI.ln() - ln_gamma(0.5 * p)).exp();
        let radius = self.support_radius();
        let radial = |power: f64, squared: bool| -> Result<f64> {
            quadrature::integrate(
                |r| {
                    let k = self.eval_sq_norm(r * r);
                    let k = if squared { k * k } else { k };
                    r.powf(power) * k
                },
                0.0,
                radius,
                MOMENT_REL_TOL,
            )
        };
        let mu2 = surface / p * radial(p + 1.0, false)?;
        let mu4 = 3.0 * surface / (p * (p + 2.0)) * radial(p + 3.0, false)?;
        let j0 = surface * radial(p - 1.0, true)?;
        let j2 = surface / p * radial(p + 1.0, true)?;
        Ok(KernelMoments {
            mu2,
            mu4,
            j0,
            j2,
            dim: self.dim,
        })
    }
}

/// Positive bandwidth `h`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Bandwidth(f64);

impl Bandwidth {
    pub fn new(h: f64) -> Result<Self> {
        if h.is_finite() && h > 0.0 {
            Ok(Self(h))
        } else {
            Err(Error::input(format!("bandwidth must be positive and finite, got {h}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Bandwidth {
    type Error = Error;
    fn try_from(h: f64) -> Result<Self> {
        Bandwidth::new(h)
    }
}

impl From<Bandwidth> for f64 {
    fn from(h: Bandwidth) -> f64 {
        h.0
    }
}

/// Rule-of-thumb bandwidth `scale · n^(-1/(p+4))`.
pub fn default_bandwidth(n: usize, p: usize, scale: f64) -> Result<Bandwidth> {
    if n == 0 || p == 0 {
        return Err(Error::input("default_bandwidth needs n >= 1 and p >= 1"));
    }
    Bandwidth::new(scale * (n as f64).powf(-1.0 / (p as f64 + 4.0)))
}

/// Squared scaled distances `|(X_i - x)/h|²` for every row.
pub(crate) fn scaled_sq_distances(features: &DMatrix<f64>, x: &[f64], h: Bandwidth) -> DVector<f64> {
    let inv_h2 = 1.0 / (h.value() * h.value());
    let mut d2 = DVector::zeros(features.nrows());
    for (j, col) in features.column_iter().enumerate() {
        let xj = x[j];
        for (acc, v) in d2.iter_mut().zip(col.iter()) {
            let d = v - xj;
            *acc += d * d;
        }
    }
    d2 * inv_h2
}

/// Kernel weights `K((X_i - x)/h)` for each row of `features`.
pub fn weight_vector(
    features: &DMatrix<f64>,
    x: &[f64],
    h: Bandwidth,
    spec: &KernelSpec,
) -> Result<DVector<f64>> {
    if features.ncols() != x.len() || spec.dim != x.len() {
        return Err(Error::input(format!(
            "feature width {}, target length {} and kernel dimension {} disagree",
            features.ncols(),
            x.len(),
            spec.dim
        )));
    }
    let scale = spec.peak();
    Ok(scaled_sq_distances(features, x, h).map(|d2| scale * spec.unnormalized(d2)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn gaussian_values_at_origin() {
        let k1 = KernelSpec::gaussian(1);
        assert!((k1.eval(&[0.0]).unwrap() - 0.398_942_280_401_432_7).abs() < 1e-15);
        let k2 = KernelSpec::gaussian(2);
        assert!((k2.eval(&[0.0, 0.0]).unwrap() - 0.159_154_943_091_895_35).abs() < 1e-15);
        let a = k2.eval(&[1.0, 1.0]).unwrap();
        let b = k2.eval(&[2f64.sqrt(), 0.0]).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_input_error() {
        let k = KernelSpec::gaussian(2);
        assert!(matches!(k.eval(&[1.0]), Err(Error::Input(_))));
        assert!(KernelSpec::new(KernelFamily::Gaussian, 0).is_err());
    }

    #[test]
    fn epanechnikov_has_compact_support() {
        let k = KernelSpec::epanechnikov(2);
        assert_eq!(k.eval(&[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(k.eval(&[0.8, 0.8]).unwrap(), 0.0);
        assert!(k.eval(&[0.5, 0.0]).unwrap() > 0.0);
        // c_1 = 3/4 for the classical one-dimensional kernel
        assert!((KernelSpec::epanechnikov(1).peak() - 0.75).abs() < 1e-14);
    }

    #[test]
    fn quadrature_reproduces_gaussian_closed_form() {
        for p in 1..=6 {
            let k = KernelSpec::gaussian(p);
            let closed = k.moments().unwrap();
            let quad = k.moments_by_quadrature().unwrap();
            assert!((closed.mu2 - quad.mu2).abs() < 1e-9 * closed.mu2, "p={p}");
            assert!((closed.mu4 - quad.mu4).abs() < 1e-9 * closed.mu4, "p={p}");
            assert!((closed.j0 - quad.j0).abs() < 1e-9 * closed.j0, "p={p}");
            assert!((closed.j2 - quad.j2).abs() < 1e-9 * closed.j2, "p={p}");
        }
    }

    #[test]
    fn epanechnikov_one_dimensional_moments() {
        // K = 3/4 (1 - u²): mu2 = 1/5, mu4 = 3/35, ∫K² = 3/5, ∫u²K² = 3/35.
        let m = KernelSpec::epanechnikov(1).moments().unwrap();
        assert!((m.mu2 - 0.2).abs() < 1e-10);
        assert!((m.mu4 - 3.0 / 35.0).abs() < 1e-10);
        assert!((m.j0 - 0.6).abs() < 1e-10);
        assert!((m.j2 - 3.0 / 35.0).abs() < 1e-10);
    }

    #[test]
    fn weights_match_standard_normal_pdf() {
        let x = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 2.0]);
        let w = weight_vector(&x, &[0.0], Bandwidth::new(1.0).unwrap(), &KernelSpec::gaussian(1)).unwrap();
        let expected = [0.398_942_280_401_432_7, 0.241_970_724_519_143_37, 0.053_990_966_513_188_06];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn weight_at_target_row_is_peak_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = KernelSpec::gaussian(3);
        let mut x = DMatrix::<f64>::from_fn(40, 3, |_, _| rng.sample(StandardNormal));
        let target = [0.2, -0.1, 0.4];
        for j in 0..3 {
            x[(7, j)] = target[j];
        }
        let h = Bandwidth::new(0.7).unwrap();
        let w = weight_vector(&x, &target, h, &spec).unwrap();
        assert_eq!(w[7], spec.peak());
        assert!(w.iter().all(|&v| (0.0..=spec.peak()).contains(&v)));

        let wide = weight_vector(&x, &target, Bandwidth::new(1.4).unwrap(), &spec).unwrap();
        for i in 0..40 {
            assert!(wide[i] >= w[i]);
        }
    }

    #[test]
    fn nonpositive_bandwidth_rejected() {
        assert!(Bandwidth::new(0.0).is_err());
        assert!(Bandwidth::new(-1.0).is_err());
        assert!(Bandwidth::new(f64::NAN).is_err());
        assert!(serde_json::from_str::<Bandwidth>("-0.5").is_err());
    }

    #[test]
    fn rule_of_thumb_bandwidth() {
        assert_eq!(default_bandwidth(1, 3, 0.5).unwrap().value(), 0.5);
        let h = default_bandwidth(10_000, 10, 1.0).unwrap().value();
        assert!((h - 10_000f64.powf(-1.0 / 14.0)).abs() < 1e-15);
        assert!((h - 0.5179).abs() < 1e-4);
        let mut last = f64::INFINITY;
        for n in [1, 10, 100, 1000, 10_000] {
            let h = default_bandwidth(n, 2, 1.0).unwrap().value();
            assert!(h < last);
            last = h;
        }
    }
}
