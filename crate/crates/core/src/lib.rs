//! Immersed-boundary finite-element solvers driven by loss minimization.
//!
//! Geometry enters as an oriented, area-weighted boundary point cloud; a
//! regular background grid of bilinear elements carries the unknowns; the
//! object interior is identified by generalized winding numbers (or an
//! Eikonal signed-distance field) and masked out of the Galerkin residual.
//! Boundary conditions on the immersed boundary are imposed by penalty.

pub mod error;
pub mod experiments;
pub mod geometry;
pub mod grid_fem;
pub mod occupancy;
pub mod optimizer;
pub mod parametric;
pub mod residual;
pub mod sparse;

pub use error::{Error, Result};
