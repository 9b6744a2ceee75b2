//! Probability current `j = Im(conj(psi) grad psi)`, its divergence, flux
//! through triangulated surfaces, and the cross-section quotient of the
//! scattered angular flux density by the incident flux.

use crate::error::{Error, Result};
use crate::fit::loglog_slope;
use crate::model::{DirectionGrid, Grid3, ScalarField, Vec3};
use crate::stationary::{self, AmplitudeTable, LsSolution};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;
use std::io::Write;

/// Current density per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxField {
    grid: Grid3,
    values: Vec<[f64; 3]>,
}

/// Second-order derivative along one axis: central inside, one-sided at
/// the two faces.
#[inline]
fn diff<T>(at: impl Fn(usize) -> T, i: usize, n: usize, h: f64) -> T
where
    T: std::ops::Sub<Output = T> + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
{
    if i == 0 {
        (at(1) * 4.0 - at(0) * 3.0 - at(2)) * (0.5 / h)
    } else if i == n - 1 {
        (at(n - 1) * 3.0 - at(n - 2) * 4.0 + at(n - 3)) * (0.5 / h)
    } else {
        (at(i + 1) - at(i - 1)) * (0.5 / h)
    }
}

fn gradient_component<T>(values: &[T], grid: &Grid3, idx: usize, axis: usize) -> T
where
    T: Copy + std::ops::Sub<Output = T> + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
{
    let d = grid.dims();
    let c = grid.unravel(idx);
    let at = |m: usize| {
        let mut p = c;
        p[axis] = m;
        values[grid.index(p[0], p[1], p[2])]
    };
    diff(at, c[axis], d[axis], grid.spacing())
}

/// `j = Im(conj(psi) grad psi)` with second-order differences.
pub fn flux_field(psi: &ScalarField) -> Result<FluxField> {
    let grid = psi.grid();
    if grid.dims().iter().any(|&n| n < 3) {
        return Err(Error::InvalidGrid("flux needs at least 3 cells per axis".into()));
    }
    let v = psi.values();
    let values = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let c = v[idx].conj();
            let mut j = [0.0; 3];
            for (a, ja) in j.iter_mut().enumerate() {
                let g: Complex64 = gradient_component(v, grid, idx, a);
                *ja = (c * g).im;
            }
            j
        })
        .collect();
    Ok(FluxField { grid: grid.clone(), values })
}

/// Discrete divergence with the same difference scheme.
pub fn divergence(f: &FluxField) -> Vec<f64> {
    let comps: Vec<Vec<f64>> = (0..3).map(|a| f.values.iter().map(|j| j[a]).collect()).collect();
    (0..f.grid.len())
        .into_par_iter()
        .map(|idx| (0..3).map(|a| gradient_component(&comps[a], &f.grid, idx, a)).sum())
        .collect()
}

impl FluxField {
    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    pub fn values(&self) -> &[[f64; 3]] {
        &self.values
    }

    /// Trilinear interpolation between cell centres.
    pub fn interpolate(&self, p: &Vec3) -> Result<Vec3> {
        let g = &self.grid;
        let d = g.dims();
        let h = g.spacing();
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let s = (p[a] - g.origin()[a]) / h - 0.5;
            if !(s >= 0.0) || s > (d[a] - 1) as f64 {
                return Err(Error::Domain(format!("point {p:?} outside the flux field's interior")));
            }
            let i = (s.floor() as usize).min(d[a] - 2);
            base[a] = i;
            frac[a] = s - i as f64;
        }
        let mut out = Vec3::zeros();
        for corner in 0..8 {
            let o = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
            let w: f64 = (0..3).map(|a| if o[a] == 1 { frac[a] } else { 1.0 - frac[a] }).product();
            if w == 0.0 {
                continue;
            }
            let j = self.values[g.index(base[0] + o[0], base[1] + o[1], base[2] + o[2])];
            out += Vec3::new(j[0], j[1], j[2]) * w;
        }
        Ok(out)
    }

    /// Flat little-endian `(jx, jy, jz)` triples.
    pub fn write_raw<W: Write>(&self, mut w: W) -> Result<()> {
        let mut buf = Vec::with_capacity(self.values.len() * 24);
        for j in &self.values {
            for c in j {
                buf.extend_from_slice(&c.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }
}

/// Triangulated surface reduced to centroids, outward unit normals and
/// area weights.
#[derive(Debug, Clone)]
pub struct SurfacePatch {
    pub centroids: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub weights: Vec<f64>,
    /// Raw triangle area over analytic area, before normalisation.
    pub area_ratio: f64,
}

impl SurfacePatch {
    pub fn total_area(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Sphere from a refined icosahedron; `refinement` subdivisions of each
    /// face into four.
    pub fn sphere(center: Vec3, radius: f64, refinement: usize) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InvalidArgument(format!("sphere radius must be positive, got {radius}")));
        }
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let mut verts: Vec<Vec3> = [
            [-1.0, t, 0.0],
            [1.0, t, 0.0],
            [-1.0, -t, 0.0],
            [1.0, -t, 0.0],
            [0.0, -1.0, t],
            [0.0, 1.0, t],
            [0.0, -1.0, -t],
            [0.0, 1.0, -t],
            [t, 0.0, -1.0],
            [t, 0.0, 1.0],
            [-t, 0.0, -1.0],
            [-t, 0.0, 1.0],
        ]
        .iter()
        .map(|p| Vec3::new(p[0], p[1], p[2]).normalize())
        .collect();
        let mut faces: Vec<[usize; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..refinement {
            let mut cache = std::collections::HashMap::new();
            let mut mid = |a: usize, b: usize, verts: &mut Vec<Vec3>| {
                *cache.entry((a.min(b), a.max(b))).or_insert_with(|| {
                    verts.push(((verts[a] + verts[b]) / 2.0).normalize());
                    verts.len() - 1
                })
            };
            let mut next = Vec::with_capacity(faces.len() * 4);
            for f in &faces {
                let ab = mid(f[0], f[1], &mut verts);
                let bc = mid(f[1], f[2], &mut verts);
                let ca = mid(f[2], f[0], &mut verts);
                next.extend_from_slice(&[[f[0], ab, ca], [f[1], bc, ab], [f[2], ca, bc], [ab, bc, ca]]);
            }
            faces = next;
        }
        let tris: Vec<[Vec3; 3]> =
            faces.iter().map(|f| [verts[f[0]] * radius, verts[f[1]] * radius, verts[f[2]] * radius]).collect();
        let mut patch = Self::from_triangles(&tris, 4.0 * PI * radius * radius, |c| c.normalize());
        patch.centroids.iter_mut().for_each(|c| *c += center);
        Ok(patch)
    }

    /// Flat disk with normal `normal`, triangulated in `rings` rings.
    pub fn disk(center: Vec3, normal: Vec3, radius: f64, rings: usize) -> Result<Self> {
        if !(radius > 0.0) || !(normal.norm() > 0.0) || rings == 0 {
            return Err(Error::InvalidArgument("disk needs radius > 0, a non-zero normal and rings >= 1".into()));
        }
        let n = normal.normalize();
        let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        let e1 = n.cross(&helper).normalize();
        let e2 = n.cross(&e1);
        let point = |r: f64, phi: f64| (e1 * phi.cos() + e2 * phi.sin()) * r;
        let mut tris = Vec::new();
        for ring in 0..rings {
            let (r0, r1) = (radius * ring as f64 / rings as f64, radius * (ring + 1) as f64 / rings as f64);
            let m = 6 * (ring + 1);
            let m0 = 6 * ring.max(1);
            for s in 0..m {
                let p0 = 2.0 * PI * s as f64 / m as f64;
                let p1 = 2.0 * PI * (s + 1) as f64 / m as f64;
                if ring == 0 {
                    tris.push([Vec3::zeros(), point(r1, p0), point(r1, p1)]);
                } else {
                    let q = |p: f64| point(r0, (p * m0 as f64 / (2.0 * PI)).round() * 2.0 * PI / m0 as f64);
                    tris.push([q(p0), point(r1, p0), point(r1, p1)]);
                    if (q(p0) - q(p1)).norm() > 0.0 {
                        tris.push([q(p0), point(r1, p1), q(p1)]);
                    }
                }
            }
        }
        let mut patch = Self::from_triangles(&tris, PI * radius * radius, |_| n);
        patch.centroids.iter_mut().for_each(|c| *c += center);
        Ok(patch)
    }

    fn from_triangles(tris: &[[Vec3; 3]], analytic_area: f64, normal: impl Fn(&Vec3) -> Vec3) -> Self {
        let mut centroids = Vec::with_capacity(tris.len());
        let mut normals = Vec::with_capacity(tris.len());
        let mut weights = Vec::with_capacity(tris.len());
        for t in tris {
            let c = (t[0] + t[1] + t[2]) / 3.0;
            weights.push(0.5 * (t[1] - t[0]).cross(&(t[2] - t[0])).norm());
            normals.push(normal(&c));
            centroids.push(c);
        }
        let raw: f64 = weights.iter().sum();
        let scale = analytic_area / raw;
        weights.iter_mut().for_each(|w| *w *= scale);
        Self { centroids, normals, weights, area_ratio: raw / analytic_area }
    }
}

/// `sum_i j(x_i)·nu_i w_i` with `j` interpolated trilinearly.
pub fn surface_flux(jf: &FluxField, s: &SurfacePatch) -> Result<f64> {
    let parts: Result<Vec<f64>> = s
        .centroids
        .par_iter()
        .zip(&s.normals)
        .zip(&s.weights)
        .map(|((c, n), w)| Ok(jf.interpolate(c)?.dot(n) * w))
        .collect();
    Ok(parts?.iter().sum())
}

/// `j_a(theta) = |b(n)|^2 |a(theta)|^2 |k|`.
pub fn angular_scattered_density(table: &AmplitudeTable, b_abs: f64) -> Vec<f64> {
    let k = table.wave.k_mag();
    table.sigma.iter().map(|s| b_abs * b_abs * s * k).collect()
}

#[derive(Debug, Clone)]
pub struct CrossSectionTable {
    pub dirs: DirectionGrid,
    pub sigma: Vec<f64>,
}

impl CrossSectionTable {
    /// Columns `theta_x, theta_y, theta_z, sigma`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["theta_x", "theta_y", "theta_z", "sigma"])?;
        for (t, s) in self.dirs.points().iter().zip(&self.sigma) {
            out.write_record([t.x, t.y, t.z, *s].iter().map(|v| format!("{v:.17e}")))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `sigma(theta) = j_a(theta) / |j_in|`.
pub fn cross_section(j_a: &[f64], dirs: &DirectionGrid, j_in: f64) -> Result<CrossSectionTable> {
    if !(j_in > 0.0) {
        return Err(Error::DegenerateFlux);
    }
    if j_a.len() != dirs.len() {
        return Err(Error::InvalidArgument("density and direction grid differ in length".into()));
    }
    Ok(CrossSectionTable { dirs: dirs.clone(), sigma: j_a.iter().map(|j| j / j_in).collect() })
}

/// Relative tolerance between the measured far-field flux and the cross
/// section at the largest probe radius.
pub const FAR_FIELD_TOL: f64 = 0.05;

/// Largest admissible log-log slope of the far-field flux deviation in `R`.
pub const FAR_FIELD_SLOPE: f64 = -1.0;

/// Scattered flux measured at finite radii against the cross section.
#[derive(Debug, Clone, Serialize)]
pub struct FarFluxReport {
    pub radii: Vec<f64>,
    /// `R^2 j_sc(R theta)·theta / (|b|^2 |k|)` per radius, per direction.
    pub measured: Vec<Vec<f64>>,
    pub sigma: Vec<f64>,
    /// `max_theta |measured - sigma| / sigma` per radius.
    pub max_rel_dev: Vec<f64>,
    pub slope: f64,
}

/// Evaluates the scattered current of `sol` on small probe grids (spacing
/// `probe_h`, 3 cells per axis) centred at `R theta` and compares with the
/// amplitude table of the same solution.
pub fn far_field_flux(sol: &LsSolution, dirs: &DirectionGrid, radii: &[f64], probe_h: f64) -> Result<FarFluxReport> {
    let table = stationary::amplitude(sol, dirs)?;
    let b_abs = match sol.normalization {
        Some(b) => b.norm(),
        None => 1.0,
    };
    let k = sol.wave.k_mag();
    let mut measured = Vec::new();
    let mut max_rel_dev = Vec::new();
    for &r in radii {
        let mut row = Vec::with_capacity(dirs.len());
        for t in dirs.points() {
            let t = t / t.norm();
            let probe = Grid3::cube(t * r, 1.5 * probe_h, 3)?;
            let psi = ScalarField::new(probe.clone(), sol.scattered(&probe.centers())?)?;
            let jf = flux_field(&psi)?;
            let j = jf.values()[probe.index(1, 1, 1)];
            row.push(r * r * Vec3::new(j[0], j[1], j[2]).dot(&t) / (b_abs * b_abs * k));
        }
        let dev =
            row.iter().zip(&table.sigma).map(|(m, s)| (m - s).abs() / s.max(f64::MIN_POSITIVE)).fold(0.0, f64::max);
        measured.push(row);
        max_rel_dev.push(dev);
    }
    let slope = loglog_slope(radii, &max_rel_dev);
    Ok(FarFluxReport { radii: radii.to_vec(), measured, sigma: table.sigma.clone(), max_rel_dev, slope })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane(k: Vec3, h: f64) -> ScalarField {
        let g = Grid3::cube(Vec3::zeros(), 2.0, (4.0 / h) as usize).unwrap();
        ScalarField::from_fn(g, |x| Complex64::from_polar(1.0, k.dot(x)))
    }

    #[test]
    fn plane_wave_current_is_k() {
        let k = Vec3::new(0.3, -0.5, 0.8);
        let mut errs = Vec::new();
        for h in [0.2, 0.1] {
            let jf = flux_field(&plane(k, h)).unwrap();
            let g = jf.grid();
            let e = (0..g.len())
                .filter(|&i| g.unravel(i).iter().all(|&c| c > 0 && c < g.dims()[0] - 1))
                .map(|i| (Vec3::from(jf.values()[i]) - k).norm())
                .fold(0.0, f64::max);
            errs.push(e);
        }
        assert!(errs[0] < 0.01);
        assert!(errs[0] / errs[1] > 3.5, "{errs:?}");
    }

    #[test]
    fn real_field_has_no_current_and_phase_is_invisible() {
        let g = Grid3::cube(Vec3::zeros(), 1.0, 6).unwrap();
        let psi = ScalarField::from_fn(g, |x| Complex64::new((-x.norm_squared()).exp(), 0.0));
        assert!(flux_field(&psi).unwrap().values().iter().all(|j| j.iter().all(|c| *c == 0.0)));
        let wave = ScalarField::from_fn(psi.grid().clone(), |x| Complex64::new(x.x.cos(), (x.y + x.z).sin()));
        let a = flux_field(&wave).unwrap();
        let b = flux_field(&wave.scaled(Complex64::from_polar(1.0, 0.7))).unwrap();
        for (p, q) in a.values().iter().zip(b.values()) {
            for c in 0..3 {
                assert!((p[c] - q[c]).abs() <= 1e-15 * (1.0 + p[c].abs()));
            }
        }
        let c = flux_field(&wave.scaled(Complex64::new(2.0, 0.0))).unwrap();
        for (p, q) in a.values().iter().zip(c.values()) {
            for i in 0..3 {
                assert!((4.0 * p[i] - q[i]).abs() <= 1e-14 * (1.0 + p[i].abs()));
            }
        }
    }

    #[test]
    fn spherical_wave_current() {
        let k = 1.3;
        let center = Vec3::new(3.0, 1.0, -2.0);
        let g = Grid3::cube(center, 0.03, 3).unwrap();
        let psi = ScalarField::from_fn(g.clone(), |x| Complex64::from_polar(1.0, k * x.norm()) / x.norm());
        let j = flux_field(&psi).unwrap().values()[g.index(1, 1, 1)];
        let r = center.norm();
        let radial = Vec3::from(j).dot(&(center / r));
        assert!((radial - k / (r * r)).abs() < 1e-3 * k / (r * r));
    }

    #[test]
    fn icosphere_and_disk_areas() {
        let s = SurfacePatch::sphere(Vec3::new(1.0, 0.0, 0.0), 2.0, 3).unwrap();
        assert!((s.total_area() - 16.0 * PI).abs() < 1e-6 * 16.0 * PI);
        assert!(s.area_ratio > 0.98 && s.area_ratio < 1.0);
        assert!(s.normals.iter().all(|n| (n.norm() - 1.0).abs() < 1e-12));
        let d = SurfacePatch::disk(Vec3::zeros(), Vec3::z(), 1.0, 12).unwrap();
        assert!((d.total_area() - PI).abs() < 1e-6 * PI);
        assert!(d.area_ratio > 0.98 && d.area_ratio <= 1.0 + 1e-12);
    }

    #[test]
    fn plane_wave_through_disk() {
        let k = Vec3::new(0.0, 0.0, 1.2);
        let psi = plane(k, 0.1);
        let jf = flux_field(&psi).unwrap();
        let d = SurfacePatch::disk(Vec3::zeros(), Vec3::z(), 1.0, 10).unwrap();
        let flux = surface_flux(&jf, &d).unwrap();
        assert!((flux - 1.2 * PI).abs() < 1e-2 * 1.2 * PI);
        let far = SurfacePatch::disk(Vec3::new(5.0, 0.0, 0.0), Vec3::z(), 1.0, 4).unwrap();
        assert!(matches!(surface_flux(&jf, &far), Err(Error::Domain(_))));
    }

    #[test]
    fn closed_sphere_around_plane_wave_has_zero_net_flux() {
        let psi = plane(Vec3::new(0.4, 0.2, -0.9), 0.1);
        let jf = flux_field(&psi).unwrap();
        let s = SurfacePatch::sphere(Vec3::zeros(), 1.0, 3).unwrap();
        assert!(surface_flux(&jf, &s).unwrap().abs() < 1e-3);
    }

    #[test]
    fn density_and_cross_section_formulae() {
        let dirs = DirectionGrid::lebedev(7).unwrap();
        let wc = crate::model::WaveContext::plane(Vec3::new(2.0, 0.0, 0.0)).unwrap();
        let table = AmplitudeTable::new(dirs.clone(), vec![Complex64::new(0.0, 0.5); dirs.len()], wc);
        let ja = angular_scattered_density(&table, 1.0);
        assert!(ja.iter().all(|v| (*v - 0.5).abs() < 1e-15));
        let cs = cross_section(&ja, &dirs, 2.0).unwrap();
        assert!(cs.sigma.iter().zip(&table.sigma).all(|(a, b)| a == b));
        assert!(matches!(cross_section(&ja, &dirs, 0.0), Err(Error::DegenerateFlux)));
    }
}
