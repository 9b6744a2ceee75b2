//! Numerical laboratory for quantum scattering by a short-range potential.
//!
//! The crate solves the stationary Lippmann-Schwinger equations for plane and
//! spherical (point-source) incident waves, evolves the harmonically driven
//! Schrödinger equation in time, and extracts the observables built on top of
//! them: scattering amplitudes, T-matrix values, fluxes and differential cross
//! sections. Two limits are measured numerically: the long-time approach to
//! the stationary limit amplitude, and the convergence of spherical-source
//! amplitudes to the plane-wave amplitude as the source recedes.
//!
//! Module map:
//!
//! - [`model`]: grids, fields, potentials, sources, direction quadratures and
//!   hypothesis validators.
//! - [`resolvent`]: the outgoing free resolvent kernel and its quadratures.
//! - [`stationary`]: Lippmann-Schwinger solvers, amplitudes, T-matrix,
//!   source-distance convergence studies.
//! - [`timedomain`]: Crank-Nicolson evolution with a harmonic source,
//!   limit-amplitude extraction and the continuity residual.
//! - [`flux`]: probability current, surface fluxes and cross sections.
//! - [`oracle`]: partial-wave phase shifts for radial potentials, used as an
//!   independent check on the three-dimensional solvers.
//! - [`experiment`]: configuration-driven experiment runner behind the
//!   `scatlab` binary.

// Argument checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod flux;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod resolvent;
pub mod stationary;
pub mod timedomain;

mod fit;
#[cfg(test)]
mod properties;

pub use error::{Error, Result};
pub use model::{DirectionGrid, FormFactor, Grid3, Potential, ScalarField, SupportBox, Vec3, WaveContext};
pub use num_complex::Complex64;
