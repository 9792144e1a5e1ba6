//! Fourier representation of periodic fields and the linear operators acting
//! on them.

pub mod checkpoint;
pub(crate) mod fft;
mod field;
mod ops;

pub use field::{PhysicalVectorField, ScalarField, SpectralVectorField};
pub use ops::{
    curl, galerkin_ball, gradient_norm_sq, gradient_tensor, heat_semigroup, l2_inner, l2_norm_sq,
    leray_project, random_divfree_field, weighted_norm_sq,
};
pub(crate) use ops::cross;
