pub mod data;
pub mod dataset;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod kernels;
pub mod linalg;
pub mod predictors;
pub mod quadrature;
pub mod rng;
pub mod special;
pub mod uncertainty;

pub use dataset::Dataset;
pub use error::{Error, Result};
pub use estimators::{Estimator, LocalFit, LocalLinear, Method, Rectifier};
pub use kernels::{Bandwidth, KernelFamily, KernelSpec};
pub use uncertainty::{BiasFormula, BiasTerms, ConfidenceInterval, ConfidenceRegion, CovarianceEstimate};
