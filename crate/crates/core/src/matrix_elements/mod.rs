//! Matrix elements of the light-matter and collisional couplings.
//!
//! Everything an event rate needs reduces to a handful of integrals over
//! harmonic oscillator eigenfunctions: recoil displacement overlaps for
//! absorption, their emission-direction averages, and the two-body contact
//! kernel. Each is tabulated once per trap geometry and cached.

pub mod cache;
pub mod displacement;
pub mod emission;
pub(crate) mod fac;
pub mod hermite;
pub mod quadrature;
pub mod quartic;
pub mod radial;
pub mod utilde;
pub mod xi_table;
