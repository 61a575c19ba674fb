//! Device library: parameters, hand-reduced models and raw equation emitters.

pub mod device;
pub mod gfm;
pub mod machine;
pub mod params;
pub mod raw;
pub mod scalar;
pub mod transformer;

pub use device::Device;
pub use gfm::{gfm_rhs, GfmInputs};
pub use machine::{machine_transformer_reduced_rhs, solve_interface_voltages, InterfaceSolve, UnitInputs};
pub use params::*;
pub use scalar::{Dual, Scalar};
pub use transformer::{transformer_magnetizing, transformer_reduced_rhs};
pub use raw::{emit_raw_equations, RawContext};
