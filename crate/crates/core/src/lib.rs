//! Enriched Galerkin discretization of the stationary incompressible
//! Navier-Stokes equations on triangulations of the unit square, with an
//! optional divergence-preserving velocity reconstruction.

pub mod analysis;
pub mod assembly;
pub mod cli;
pub mod error;
pub mod io;
pub mod lu;
pub mod mesh;
pub mod quadrature;
pub mod reconstruction;
pub mod solver;
pub mod sparse;
pub mod spaces;

pub use error::{Error, Result};
