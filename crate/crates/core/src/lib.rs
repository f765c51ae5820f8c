//! Classical grand angular momentum for N-body systems.
//!
//! The crate reduces an N-body system to a single virtual body in `3N - 3`
//! dimensions and works with the grand angular momentum of that body:
//!
//! * [`jacobi`] — binary Jacobi trees over particle indices, transforms between
//!   lab-frame states and (mass-weighted) Jacobi coordinates.
//! * [`hypersphere`] — binary hyperspherical trees over the mass-weighted
//!   components: hyperradius, hyperangles, angle rates, and the tree-readable
//!   quadratic form for the unit-vector speed.
//! * [`grandang`] — the grand angular momentum tensor, its magnitude along two
//!   independent routes, and its decomposition into three-dimensional angular
//!   momenta of the virtual bodies.
//! * [`dynamics`] — a direct Cartesian velocity-Verlet oracle, effective
//!   (angle-averaged) potentials, and the N-body scattering-angle equation.
//!
//! All types are immutable after construction and all operations are pure
//! functions, so values can be shared freely across threads.

// Negated comparisons like `!(x > 0.0)` double as NaN guards; the positive
// rewrite clippy suggests would let NaN through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod grandang;
pub mod hypersphere;
pub mod jacobi;
pub mod vec3;

mod numeric;
mod quad;

pub use error::{Error, Result};
