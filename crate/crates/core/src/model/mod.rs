//! Domain types: grids, sampled fields, potentials, sources, wave context,
//! direction quadratures and validators for the decay and non-degeneracy
//! hypotheses on the potential and the source.

mod directions;
mod field;
mod grid;
mod potential;
mod validate;
mod wave;

#[cfg(test)]
pub(crate) use directions::gauss_legendre as directions_gauss_legendre;
pub use directions::DirectionGrid;
pub use field::ScalarField;
pub use grid::{Grid3, SupportBox, Vec3};
pub use potential::{Envelope, FormFactor, Potential, DEFAULT_SUPPORT_TOL};
pub use validate::{
    halton_cloud, validate_form_factor, validate_potential, wiener_check, ValidationReport, WienerReport,
    DEFAULT_SAMPLE_COUNT,
};
pub use wave::WaveContext;

/// Japanese bracket `<x> = sqrt(1 + |x|^2)`.
#[inline]
pub fn bracket(x: &Vec3) -> f64 {
    (1.0 + x.norm_squared()).sqrt()
}
