use std::path::PathBuf;

use thiserror::Error;

/// Which dataset a design-matrix failure came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetRole {
    Labeled,
    Unlabeled,
    /// The regularized labeled + unlabeled Gram sum of the high-dimensional rectifier.
    Regularized,
}

impl std::fmt::Display for DatasetRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DatasetRole::Labeled => "labeled",
            DatasetRole::Unlabeled => "unlabeled",
            DatasetRole::Regularized => "regularized",
        })
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("singular design{}: condition estimate {condition:.3e} exceeds {threshold:.1e}", role_suffix(.role))]
    SingularDesign {
        condition: f64,
        threshold: f64,
        role: Option<DatasetRole>,
    },

    #[error("empty neighborhood{}: kernel weight mass {mass:.3e} relative to the kernel peak", role_suffix(.role))]
    EmptyNeighborhood { mass: f64, role: Option<DatasetRole> },

    #[error("numerical failure in {what} (residual estimate {residual:.3e})")]
    Numeric { what: &'static str, residual: f64 },

    #[error("degenerate resampling: {failed} of {total} replicates failed")]
    DegenerateResampling { failed: usize, total: usize },

    #[error("plug-in bias terms unavailable: {0}")]
    PluginUnavailable(String),

    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:.3e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("function is not differentiable at coordinate {coordinate}")]
    Nondifferentiable { coordinate: usize },

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("schema error in field `{field}`: {message}")]
    Schema { field: String, message: String },

    #[error("I/O error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn role_suffix(role: &Option<DatasetRole>) -> String {
    match role {
        Some(r) => format!(" ({r} dataset)"),
        None => String::new(),
    }
}

/// Coarse error classes; the CLI maps these onto exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Input,
    Singular,
    Io,
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach a dataset role to a design failure that does not carry one yet.
    pub fn with_role(self, role: DatasetRole) -> Self {
        match self {
            Error::SingularDesign {
                condition,
                threshold,
                role: None,
            } => Error::SingularDesign {
                condition,
                threshold,
                role: Some(role),
            },
            Error::EmptyNeighborhood { mass, role: None } => Error::EmptyNeighborhood {
                mass,
                role: Some(role),
            },
            other => other,
        }
    }

    /// True for failures caused by a degenerate local design rather than bad input.
    pub fn is_design_failure(&self) -> bool {
        matches!(
            self,
            Error::SingularDesign { .. } | Error::EmptyNeighborhood { .. } | Error::Numeric { .. }
        )
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::SingularDesign { .. }
            | Error::EmptyNeighborhood { .. }
            | Error::Numeric { .. }
            | Error::DegenerateResampling { .. } => ErrorClass::Singular,
            Error::Io { .. } => ErrorClass::Io,
            _ => ErrorClass::Input,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
