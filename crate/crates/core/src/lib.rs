//! Finite-volume simulation of a degenerate two-population cross-diffusion
//! system with a shared porous-medium pressure.
//!
//! The two densities `u1`, `u2` are transported down the gradient of the
//! pressure `w^gamma`, where `w = u1 + u2`, and exchange mass through
//! density-dependent growth rates. The solver advances an `epsilon`-regularized
//! version of the system with backward Euler in time and a Picard sweep that
//! freezes the degenerate coefficients, solving the `w` equation first and
//! then each species.
//!
//! Modules:
//! - [`model`]: growth rates, truncation, admissibility checks, parameters.
//! - [`grid`]: cell-centered box meshes and no-flux finite-volume operators.
//! - [`linalg`]: the SPD face-coupled systems and their solvers.
//! - [`scheme`]: time stepping and the Picard fixed-point iteration.
//! - [`diagnostics`]: mass, extrema, dissipation and weak-form residuals.
//! - [`experiments`]: Barenblatt oracle and the validation studies.
//! - [`config`]: run configuration files and initial profiles.
//! - [`output`]: CSV / JSON writers used by the command line front end.

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod linalg;
pub mod model;
pub mod output;
pub mod scheme;

pub use error::{Error, Result};
pub use grid::{Field, Grid};
pub use model::{GrowthModel, Params, RateFn};
pub use scheme::{State, StepReport};
