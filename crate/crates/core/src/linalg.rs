//! Small dense symmetric solves used by the local estimators.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, FullPivLU, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// descending order (eigenvectors as matching columns).
pub fn sorted_symmetric_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Ratio of extreme eigenvalues of a symmetric positive semi-definite
/// matrix; infinite when the smallest is not positive.
pub fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min > 0.0) || !max.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

enum Factor {
    Cholesky(Cholesky<f64, Dyn>),
    Lu(FullPivLU<f64, Dyn, Dyn>),
}

/// Factorized Gram matrix. Construction fails with `SingularDesign` when the
/// condition estimate exceeds the threshold.
pub struct GramSolver {
    factor: Factor,
    condition: f64,
}

impl GramSolver {
    pub fn new(gram: DMatrix<f64>, condition_threshold: f64) -> Result<Self> {
        if gram.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                what: "Gram matrix assembly",
                residual: f64::NAN,
            });
        }
        let condition = condition_estimate(&gram);
        if !(condition <= condition_threshold) {
            return Err(Error::SingularDesign {
                condition,
                threshold: condition_threshold,
                role: None,
            });
        }
        let factor = match Cholesky::new(gram.clone()) {
            Some(c) => Factor::Cholesky(c),
            None => Factor::Lu(FullPivLU::new(gram)),
        };
        Ok(Self { factor, condition })
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.factor {
            Factor::Cholesky(c) => Ok(c.solve(rhs)),
            Factor::Lu(lu) => lu.solve(rhs).ok_or(Error::SingularDesign {
                condition: f64::INFINITY,
                threshold: self.condition,
                role: None,
            }),
        }
    }
}

/// Serde adapter writing a matrix as a list of rows.
pub mod serde_rows {
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(m.row_iter().map(|r| r.iter().copied().collect::<Vec<f64>>()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("matrix rows have unequal lengths"));
        }
        Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
    }
}

/// Serde adapter writing a vector as a plain list.
pub mod serde_list {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::deserialize(d)?))
    }
}
