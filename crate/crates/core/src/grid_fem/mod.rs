//! Background-grid finite elements: bilinear basis on an axis-aligned
//! lattice, tensor Gauss quadrature, masked integration, and point
//! interpolation of nodal fields.
//!
//! Conventions used throughout the crate:
//!
//! - nodes are numbered row-major with `x` fastest, `idx = j * (nx + 1) + i`;
//! - element-local corners run counterclockwise from the lower-left corner,
//!   i.e. reference coordinates `(-1,-1), (1,-1), (1,1), (-1,1)`;
//! - a physical point on an interior grid line belongs to the element on its
//!   upper side (half-open cells), points on the upper domain faces belong to
//!   the last element.

mod basis;
mod field;
mod grid;
mod quadrature;

pub use basis::{shape_gradients, shape_values, REFERENCE_CORNERS};
pub use field::NodalField;
pub use grid::{BackgroundGrid, WallSide};
pub use quadrature::{gauss_rule, integrate_masked, ElementQuadrature, GaussPoint, QuadratureRule};
