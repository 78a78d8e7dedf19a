//! Finite-difference schemes for degenerate linear stochastic parabolic
//! equations on periodic lattices: scheme assembly and validation, pathwise
//! time integration, Richardson extrapolation in the mesh size and the
//! expansion hierarchy behind it.

pub mod driver;
pub mod error;
pub mod expansion;
pub mod fit;
pub mod grid;
pub mod harness;
pub mod integrator;
pub mod richardson;
pub mod scheme;
pub mod spectral;

pub use error::{Error, Result};
