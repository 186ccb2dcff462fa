//! Kinetic Monte Carlo engine for Raman sideband cooling of fermions in an
//! isotropic three-dimensional harmonic trap.
//!
//! The gas is a set of occupation numbers over single-particle oscillator
//! states. Stochastic events move atoms between states: laser pulses drive
//! recoil sidebands with Pauli-blocked spontaneous decay, and s-wave
//! collisions redistribute energy between shells. Rates follow from
//! tabulated oscillator matrix elements; the event loop samples them with
//! Fenwick trees and keeps every dependent quantity incrementally updated.

pub mod error;
pub mod kinetics;
pub mod matrix_elements;
pub mod presets;
pub mod rates;
pub mod statespace;
pub mod thermo;

pub use error::{Error, Result};

/// Reduced Planck constant, J s.
pub const HBAR: f64 = 1.054571817e-34;
