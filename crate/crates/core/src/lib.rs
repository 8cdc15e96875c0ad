//! Differentiable co-design of soft underwater swimmers.
//!
//! Geometry is a Wasserstein barycenter of base shapes on a regular grid
//! ([`transport`]), turned into a stiffness field and actuator regions
//! ([`grid`], [`actuator`]), simulated with an implicit corotational FEM
//! under analytic hydrodynamics ([`sim`]), driven by open- or closed-loop
//! controllers ([`control`]), scored by [`losses`] and optimized with Adam
//! in [`optimize`].

// Negated float comparisons deliberately treat NaN as invalid; index
// loops mirror the math they implement.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod actuator;
pub mod control;
pub mod gradcheck;
pub mod grid;
pub mod losses;
pub mod optimize;
pub mod presets;
pub mod sim;
pub mod transport;
