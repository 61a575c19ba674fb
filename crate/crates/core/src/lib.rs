pub mod expr;
pub mod dae;
pub mod structural;
pub mod integrator;
pub mod reduction;
pub mod devices;
pub mod builder;
pub mod init;
pub mod analysis;
