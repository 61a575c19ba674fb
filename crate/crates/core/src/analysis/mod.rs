//! State matrices, spectra, trajectory comparison and scaling fits.

mod bench;
mod compare;
mod spectrum;

pub use bench::{aggregate, fit_scaling, peak_rss_bytes, BenchAggregate, BenchRecord, ScalingFit};
pub use compare::{eigen_diff, trajectory_diff, EquivalenceReport, SampledTrajectory};
pub use spectrum::{
    charpoly_coefficients, eigen_residual, eigenvalues, polynomial_roots, state_matrix, state_matrix_ode,
};

pub use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("g_z is singular (nullity {nullity}); use the reduced formulation")]
    SingularGz { nullity: usize },
    #[error("matrix is not square ({0}x{1})")]
    NotSquare(usize, usize),
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("eigenvalue iteration failed: {0}")]
    Eigen(String),
    #[error("no common variables between the two trajectories")]
    DisjointVariables,
    #[error("spectra have different sizes ({0} vs {1})")]
    CountMismatch(usize, usize),
    #[error("scaling fit needs at least 3 distinct sizes, got {0}")]
    TooFewPoints(usize),
    #[error("non-positive metric value {0}")]
    NonPositive(f64),
    #[error(transparent)]
    Integration(#[from] crate::integrator::IntegrationError),
    #[error(transparent)]
    Model(#[from] crate::integrator::ModelError),
    #[error(transparent)]
    Dae(#[from] crate::dae::DaeError),
    #[error("trajectory file line {line}: {reason}")]
    Parse { line: usize, reason: String },
}
