//! Pseudo-spectral laboratory for the L2 stability of small mild solutions of
//! the incompressible Navier-Stokes equations on a large periodic box.

pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod function_spaces;
pub mod mild;
pub mod perturbation;
pub mod quadrature;
pub mod spectral;
pub mod trilinear;

pub use error::{Error, Result};
pub use grid::GridSpec;
