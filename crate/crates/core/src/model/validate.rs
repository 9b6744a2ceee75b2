use super::directions::DirectionGrid;
use super::grid::Vec3;
use super::potential::{FormFactor, Potential};
use super::{bracket, ScalarField};
use crate::error::{Error, Result};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

pub const DEFAULT_SAMPLE_COUNT: usize = 4096;

/// Outcome of an envelope check.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    /// Largest weighted value `<x>^p |d^alpha f(x)|` over the cloud.
    pub max_weighted: f64,
    /// Declared envelope constant.
    pub bound: f64,
    pub worst_point: [f64; 3],
    pub samples: usize,
    pub passed: bool,
    /// Set when the sampled function vanishes identically.
    pub degenerate: bool,
}

/// Outcome of the non-vanishing check on the source transform.
#[derive(Debug, Clone, Serialize)]
pub struct WienerReport {
    pub k_mag: f64,
    pub min_abs: f64,
    pub argmin: [f64; 3],
    /// `rho_hat(|k| theta_j)` for every direction of the grid.
    pub values: Vec<(f64, f64)>,
    pub passed: bool,
}

fn radical_inverse(mut i: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Deterministic Halton cloud in the ball of radius `radius`
/// (radius, polar cosine and azimuth drawn from bases 2, 3, 5).
pub fn halton_cloud(n: usize, radius: f64) -> Vec<Vec3> {
    (1..=n)
        .map(|i| {
            let r = radius * radical_inverse(i, 2);
            let c = 2.0 * radical_inverse(i, 3) - 1.0;
            let phi = 2.0 * std::f64::consts::PI * radical_inverse(i, 5);
            let s = (1.0 - c * c).max(0.0).sqrt();
            Vec3::new(r * s * phi.cos(), r * s * phi.sin(), r * c)
        })
        .collect()
}

/// Largest of `|d^alpha V(x)|`, `|alpha| <= 2`, by central differences.
fn max_derivative(v: &Potential, x: &Vec3) -> Result<f64> {
    let d = 1e-3;
    let f = |p: Vec3| -> Result<f64> {
        let y = v.eval(&p);
        if y.is_finite() {
            Ok(y)
        } else {
            Err(Error::InvalidPotential(format!("non-finite value at {:?}", [p.x, p.y, p.z])))
        }
    };
    let e = [Vec3::x(), Vec3::y(), Vec3::z()];
    let f0 = f(*x)?;
    let mut m = f0.abs();
    for a in 0..3 {
        let fp = f(x + e[a] * d)?;
        let fm = f(x - e[a] * d)?;
        m = m.max(((fp - fm) / (2.0 * d)).abs());
        m = m.max(((fp - 2.0 * f0 + fm) / (d * d)).abs());
        for b in (a + 1)..3 {
            let fpp = f(x + (e[a] + e[b]) * d)?;
            let fpm = f(x + (e[a] - e[b]) * d)?;
            let fmp = f(x + (e[b] - e[a]) * d)?;
            let fmm = f(x - (e[a] + e[b]) * d)?;
            m = m.max(((fpp - fpm - fmp + fmm) / (4.0 * d * d)).abs());
        }
    }
    Ok(m)
}

/// Checks `<x>^{5+eps} |d^alpha V| <= C (1 + tol)` for `|alpha| <= 2` on the
/// default Halton cloud of the ball of radius `sample_radius`.
pub fn validate_potential(v: &Potential, sample_radius: f64, tol: f64) -> Result<ValidationReport> {
    validate_potential_with(v, sample_radius, tol, DEFAULT_SAMPLE_COUNT)
}

pub fn validate_potential_with(
    v: &Potential,
    sample_radius: f64,
    tol: f64,
    samples: usize,
) -> Result<ValidationReport> {
    if sample_radius < v.support_radius() {
        return Err(Error::InvalidArgument(format!(
            "sample radius {sample_radius} does not cover the support radius {}",
            v.support_radius()
        )));
    }
    let env = v.envelope();
    let p = 5.0 + env.eps;
    let cloud = halton_cloud(samples, sample_radius);
    let weighted: Vec<f64> =
        cloud.par_iter().map(|x| max_derivative(v, x).map(|m| bracket(x).powf(p) * m)).collect::<Result<_>>()?;
    Ok(report(&cloud, &weighted, env.c, tol))
}

/// Checks `<x>^{4+eps'} |rho| <= C (1 + tol)` on the default cloud.
pub fn validate_form_factor(rho: &FormFactor, sample_radius: f64, tol: f64) -> Result<ValidationReport> {
    if rho.is_point() {
        return Err(Error::InvalidFormFactor("point sources have no pointwise envelope".into()));
    }
    if sample_radius < rho.support_radius() {
        return Err(Error::InvalidArgument(format!(
            "sample radius {sample_radius} does not cover the support radius {}",
            rho.support_radius()
        )));
    }
    let env = rho.envelope();
    let p = 4.0 + env.eps;
    let cloud = halton_cloud(DEFAULT_SAMPLE_COUNT, sample_radius);
    let weighted: Vec<f64> = cloud
        .par_iter()
        .map(|x| {
            let y = rho.eval(x);
            if y.re.is_finite() && y.im.is_finite() {
                Ok(bracket(x).powf(p) * y.norm())
            } else {
                Err(Error::InvalidFormFactor(format!("non-finite value at {:?}", [x.x, x.y, x.z])))
            }
        })
        .collect::<Result<_>>()?;
    Ok(report(&cloud, &weighted, env.c, tol))
}

fn report(cloud: &[Vec3], weighted: &[f64], bound: f64, tol: f64) -> ValidationReport {
    let (mut best, mut at) = (0.0f64, 0usize);
    for (i, &w) in weighted.iter().enumerate() {
        if w > best {
            best = w;
            at = i;
        }
    }
    let x = cloud[at];
    ValidationReport {
        max_weighted: best,
        bound,
        worst_point: [x.x, x.y, x.z],
        samples: cloud.len(),
        passed: best <= bound * (1.0 + tol),
        degenerate: best == 0.0,
    }
}

/// `rho_hat(xi) = ∫ e^{i xi·x} rho(x) dx` by midpoint quadrature of a
/// sampled field.
pub(crate) fn transform(field: &ScalarField, xi: &Vec3) -> Complex64 {
    let g = field.grid();
    let s: Complex64 = field
        .values()
        .iter()
        .enumerate()
        .filter(|(_, v)| v.re != 0.0 || v.im != 0.0)
        .map(|(idx, v)| v * Complex64::from_polar(1.0, xi.dot(&g.center_of(idx))))
        .sum();
    s * g.cell_volume()
}

/// Evaluates `rho_hat(|k| theta)` over `dirs` and passes when the minimum
/// modulus exceeds `tol`. The quadrature is repeated at half spacing; a
/// change larger than `tol` is reported as a resolution error.
pub fn wiener_check(rho: &FormFactor, k_mag: f64, dirs: &DirectionGrid, tol: f64) -> Result<WienerReport> {
    if !(k_mag > 0.0) {
        return Err(Error::InvalidArgument(format!("|k| must be positive, got {k_mag}")));
    }
    let h = rho.quadrature_spacing();
    let coarse = rho.sample_default(&Vec3::zeros(), 1.0)?;
    let fine_grid = rho.quadrature_grid(&Vec3::zeros(), h / 2.0)?;
    let fine = rho.sample(&fine_grid, &Vec3::zeros(), 1.0)?;
    let pairs: Vec<(Complex64, Complex64)> = dirs
        .points()
        .par_iter()
        .map(|t| {
            let xi = t * k_mag;
            (transform(&coarse, &xi), transform(&fine, &xi))
        })
        .collect();
    let change = pairs.iter().map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    if !rho.is_point() && change > tol {
        return Err(Error::Resolution { change, tol });
    }
    let (mut min_abs, mut at) = (f64::INFINITY, 0usize);
    for (i, (_, v)) in pairs.iter().enumerate() {
        if v.norm() < min_abs {
            min_abs = v.norm();
            at = i;
        }
    }
    let t = dirs.points()[at];
    Ok(WienerReport {
        k_mag,
        min_abs,
        argmin: [t.x, t.y, t.z],
        values: pairs.iter().map(|(_, v)| (v.re, v.im)).collect(),
        passed: min_abs > tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Envelope, SupportBox};

    #[test]
    fn halton_cloud_is_deterministic_and_inside_ball() {
        let a = halton_cloud(100, 3.0);
        let b = halton_cloud(100, 3.0);
        assert_eq!(a, b);
        assert!(a.iter().all(|p| p.norm() <= 3.0 + 1e-12));
    }

    #[test]
    fn zero_potential_passes_with_zero_max() {
        let r = validate_potential(&Potential::zero(), 10.0, 0.0).unwrap();
        assert!(r.passed);
        assert_eq!(r.max_weighted, 0.0);
    }

    #[test]
    fn non_finite_potential_is_rejected() {
        let v = Potential::from_fn(
            "bad",
            |x: &Vec3| if x.norm() < 1.0 { f64::NAN } else { 0.0 },
            SupportBox::cube(Vec3::zeros(), 2.0),
            Envelope { c: 1.0, eps: 0.5 },
        );
        assert!(matches!(validate_potential(&v, 5.0, 0.0), Err(Error::InvalidPotential(_))));
    }

    #[test]
    fn sample_radius_must_cover_support() {
        let v = Potential::gaussian_well(-1.0, 1.0).unwrap();
        assert!(validate_potential(&v, 1.0, 0.0).is_err());
    }

    #[test]
    fn zero_source_is_degenerate_and_fails_wiener() {
        let rho = FormFactor::zero();
        let r = validate_form_factor(&rho, 5.0, 0.0).unwrap();
        assert!(r.passed && r.degenerate);
        let w = wiener_check(&rho, 1.0, &DirectionGrid::lebedev(7).unwrap(), 1e-6).unwrap();
        assert!(!w.passed);
        assert_eq!(w.min_abs, 0.0);
    }

    #[test]
    fn wiener_rejects_zero_k() {
        let rho = FormFactor::gaussian_source(1.0, 1.0).unwrap();
        assert!(wiener_check(&rho, 0.0, &DirectionGrid::lebedev(7).unwrap(), 1e-6).is_err());
    }
}
