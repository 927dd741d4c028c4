//! Spectral boundary-integral simulation of surfactant-covered drops in Stokes flow.

pub mod error;
pub mod evolve;
pub mod krylov;
pub mod quadrature;
pub mod reparam;
pub mod sphgrid;
pub mod stokes;
pub mod surface;
pub mod surfactant;
pub mod vec3;

pub use error::{Error, Result};
