//! Solver library for first-order quasilinear hyperbolic systems on
//! one-dimensional networks, in the form arising from arterial blood flow:
//!
//! ```text
//!   P_t + a(x,t,P,Q) Q_x               = f(x,t,P,Q)
//!   Q_t + b(x,t,P,Q) P_x + 2c(...) Q_x = g(x,t,P,Q)
//! ```
//!
//! per branch of a network, coupled at junctions by flow balance and a common
//! pressure, and closed at terminals by pressure, flow, or windkessel
//! conditions. The time stepper is an explicit finite-difference scheme on
//! the normal (characteristic) form of the equations with direction-matched
//! one-sided differences.
//!
//! Module map:
//! - [`network`]: topology, boundary specifications, the configuration format
//! - [`model`]: coefficient models (blood flow, linear, manufactured)
//! - [`characteristics`]: eigenstructure, Riemann variables, solvability checks
//! - [`scheme`]: the explicit solver with all boundary and junction closures
//! - [`verify`]: method-of-characteristics oracle, convergence and stability studies

// positivity guards are written `!(x > 0.0)` so that NaN parameters fail
// validation instead of slipping through a `x <= 0.0` comparison
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod characteristics;
pub mod field;
mod interp;
mod linalg;
pub mod model;
pub mod network;
pub mod scheme;
pub mod signal;
pub mod verify;
