//! Particle approximation of the BGK equation.
//!
//! The crate couples a mean-field jump process (each particle jumps at rate
//! one, landing at a smoothed position and redrawing its velocity from the
//! local Maxwellian of the empirical fields) with a grid solver for the
//! regularized and plain BGK equations, and measures the convergence rates
//! between them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod empirical_fields;
pub mod error;
pub mod experiments;
pub mod kinetic_solver;
pub mod maxwellian;
pub mod metrics;
pub mod mollifier;
pub mod particle_dynamics;
pub mod phase_space;

pub use error::{Error, Result};
