use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sorted_symmetric_eigen, symmetrize};

/// Principal directions stored as rows of `components`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    #[serde(with = "crate::linalg::serde_list")]
    pub mean: DVector<f64>,
    #[serde(with = "crate::linalg::serde_rows")]
    pub components: DMatrix<f64>,
    #[serde(with = "crate::linalg::serde_list")]
    pub explained_variance: DVector<f64>,
    /// Trace of the sample covariance, for variance ratios.
    pub total_variance: f64,
}

impl PcaModel {
    pub fn explained_variance_ratio(&self) -> DVector<f64> {
        if self.total_variance > 0.0 {
            &self.explained_variance / self.total_variance
        } else {
            DVector::zeros(self.explained_variance.len())
        }
    }
}

/// Fit the top `k` principal directions of the sample covariance (divisor
/// `n - 1`). Each component's largest-magnitude loading is made positive.
pub fn pca_fit(x: &DMatrix<f64>, k: usize) -> Result<PcaModel> {
    let (n, p) = x.shape();
    if k < 1 || k > n.min(p) {
        return Err(Error::input(format!("k = {k} must lie in 1..={}", n.min(p))));
    }
    let mean = DVector::from_iterator(p, x.column_iter().map(|c| c.mean()));
    let mut centered = x.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    let cov = symmetrize(&(centered.tr_mul(&centered) / (n.saturating_sub(1).max(1)) as f64));
    let (values, vectors) = sorted_symmetric_eigen(&cov);
    let mut components = DMatrix::zeros(k, p);
    for c in 0..k {
        let v = vectors.column(c);
        let lead = v.iter().copied().fold(0.0_f64, |best, e| if e.abs() > best.abs() { e } else { best });
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        for j in 0..p {
            components[(c, j)] = sign * v[j];
        }
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance: DVector::from_iterator(k, values.iter().take(k).map(|v| v.max(0.0))),
        total_variance: cov.trace(),
    })
}

/// Centered projection onto the model's components (`n×k`).
pub fn pca_transform(model: &PcaModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() != model.mean.len() {
        return Err(Error::input(format!(
            "data has {} columns but the model was fit on {}",
            x.ncols(),
            model.mean.len()
        )));
    }
    let mut centered = x.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-model.mean[j]);
    }
    Ok(centered * model.components.transpose())
}
