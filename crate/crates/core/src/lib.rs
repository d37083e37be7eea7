//! Segregated nodal radial solutions of coupled cubic Schrödinger systems.

pub mod assignment;
pub mod cli;
pub mod config;
pub mod coupled;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod nehari;
pub mod ode;
pub mod scalar;

pub use assignment::{build_assignment, Assignment};
pub use error::{Error, Result};
pub use grid::{build_grid, RadialField, RadialGrid};
