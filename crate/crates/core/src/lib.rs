//! Least-squares finite elements for second-order elliptic problems with
//! inhomogeneous mixed boundary conditions.
//!
//! The boundary conditions are imposed through dual norms of trace
//! functionals, discretized with Raviart–Thomas and Lagrange test spaces on
//! boundary-matched coarse meshes. The resulting saddle-point system is
//! solved by block elimination, and its multipliers double as an
//! a-posteriori error estimator that drives adaptive bisection refinement.

pub mod adaptivity;
pub mod assembly;
pub mod elements;
pub mod error;
pub mod experiments;
pub mod mesh;
pub mod solver;
pub mod spaces;
pub mod sparse;
pub mod verification;

pub use error::{Error, Result};
