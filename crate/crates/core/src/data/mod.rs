//! Dataset ingestion, the piecewise simulation surface and PCA.

mod io;
mod pca;
mod simulation;

pub use io::{load_bundle, load_csv, write_csv, BundleManifest, CsvSchema, LoadedBundle, LoadedCsv, BUNDLE_SCHEMA_VERSION};
pub use pca::{pca_fit, pca_transform, PcaModel};
pub use simulation::{
    generate, simulate_gradient, simulate_hessian, simulate_laplacian_gradient, simulate_m, standard_normal_density,
    SimulatedData, SimulationSpec, Surface, Truth, SIM_DIM,
};
