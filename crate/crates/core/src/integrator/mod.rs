//! Stiff time integration and Newton-matrix conditioning utilities.

mod dae_model;
mod model;
mod newton;
mod rodas;

pub use dae_model::DaeModel;
pub use model::{fd_jacobian, Event, ModelError, OdeModel};
pub use newton::{
    bdf_coefficients, condition_1, conditioning_sweep, ls_slope, newton_iteration_matrix, ConditioningSweep, NewtonMatrixProbe,
};
pub use rodas::{integrate, uniform_grid, IntegrationError, IntegratorConfig, SolverStats, Trajectory};
