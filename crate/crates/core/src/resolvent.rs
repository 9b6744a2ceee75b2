//! Outgoing free resolvent `R0(E + i0)` of `-Δ/2`, an integral operator with
//! kernel `e^{i|k||x-y|} / (2 pi |x-y|)`, `|k| = sqrt(2E)`.
//!
//! Densities live on cell-centred grids and are integrated by the midpoint
//! rule. When a target coincides with a source cell centre the singular
//! self-cell term is replaced by the exact integral of the kernel over the
//! ball of equal volume.

use crate::error::{Error, Result};
use crate::fit::loglog_slope;
use crate::linalg::LinearOperator;
use crate::model::{DirectionGrid, FormFactor, Grid3, ScalarField, Vec3, WaveContext};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::Arc;

fn k_of_energy(energy: f64) -> Result<f64> {
    if !(energy > 0.0) || !energy.is_finite() {
        return Err(Error::InvalidArgument(format!("energy must be positive, got {energy}")));
    }
    Ok((2.0 * energy).sqrt())
}

/// `e^{i k r} / (2 pi r)`.
#[inline]
pub(crate) fn green(k: f64, r: f64) -> Complex64 {
    let (s, c) = (k * r).sin_cos();
    Complex64::new(c, s) / (2.0 * PI * r)
}

/// Free resolvent kernel `R0(E + i0, x, y)`.
pub fn kernel(energy: f64, x: &Vec3, y: &Vec3) -> Result<Complex64> {
    let k = k_of_energy(energy)?;
    let r = (x - y).norm();
    if r == 0.0 {
        return Err(Error::SingularPoint);
    }
    Ok(green(k, r))
}

/// Integral of the kernel over a ball of volume `h^3` centred on the
/// singularity: with `a = (3 h^3 / 4 pi)^{1/3}`,
/// `∫ e^{ikr}/(2 pi r) d^3r = 2 ∫_0^a r e^{ikr} dr = (2/k^2)(e^{ika}(1 - ika) - 1)`,
/// which tends to `a^2` as `k -> 0`.
pub fn diagonal_correction(energy: f64, h: f64) -> Complex64 {
    let k = if energy > 0.0 { (2.0 * energy).sqrt() } else { 0.0 };
    ball_integral(k, h)
}

pub(crate) fn ball_integral(k: f64, h: f64) -> Complex64 {
    let a = (3.0 * h * h * h / (4.0 * PI)).cbrt();
    let z = k * a;
    if z < 1e-3 {
        // a^2 (1 + 2i z/3 - z^2/4 - i z^3/15)
        let i = Complex64::i();
        return a * a * (1.0 + i * (2.0 * z / 3.0) - z * z / 4.0 - i * (z * z * z / 15.0));
    }
    let e = Complex64::from_polar(1.0, z);
    (e * Complex64::new(1.0, -z) - 1.0) * (2.0 / (k * k))
}

/// Dense quadrature matrix of `R0` from a source grid to a set of target
/// points, `entry(t, s) = h^3 G(x_t - y_s)`, with the ball-corrected value
/// wherever `|x_t - y_s| < h/2`.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    energy: f64,
    source: Grid3,
    targets: Vec<Vec3>,
    entries: Vec<Complex64>,
}

impl KernelMatrix {
    pub fn assemble(energy: f64, source: &Grid3, targets: &[Vec3]) -> Result<Self> {
        let k = k_of_energy(energy)?;
        let h = source.spacing();
        let w = source.cell_volume();
        let diag = ball_integral(k, h);
        let ns = source.len();
        let centers = source.centers();
        let entries: Vec<Complex64> = targets
            .par_iter()
            .flat_map_iter(|t| {
                let centers = &centers;
                (0..ns).map(move |s| {
                    let r = (t - centers[s]).norm();
                    if r < 0.5 * h {
                        diag
                    } else {
                        w * green(k, r)
                    }
                })
            })
            .collect();
        Ok(Self { energy, source: source.clone(), targets: targets.to_vec(), entries })
    }

    pub fn rows(&self) -> usize {
        self.targets.len()
    }

    pub fn cols(&self) -> usize {
        self.source.len()
    }

    pub fn entry(&self, t: usize, s: usize) -> Complex64 {
        self.entries[t * self.cols() + s]
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn source(&self) -> &Grid3 {
        &self.source
    }

    pub fn targets(&self) -> &[Vec3] {
        &self.targets
    }

    pub fn apply(&self, density: &[Complex64]) -> Vec<Complex64> {
        let n = self.cols();
        self.entries.par_chunks(n).map(|row| row.iter().zip(density).map(|(a, b)| a * b).sum()).collect()
    }

    /// Flat little-endian layout: `rows, nx, ny, nz` as u64, then `h` and
    /// `E_k` as f64, then row-major `(re, im)` pairs.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.source.dims();
        let mut buf = Vec::with_capacity(48 + self.entries.len() * 16);
        for v in [self.rows() as u64, d[0] as u64, d[1] as u64, d[2] as u64] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&self.source.spacing().to_le_bytes());
        buf.extend_from_slice(&self.energy.to_le_bytes());
        for e in &self.entries {
            buf.extend_from_slice(&e.re.to_le_bytes());
            buf.extend_from_slice(&e.im.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    /// Reads the layout written by [`KernelMatrix::write_to`]; returns
    /// `(rows, dims, h, energy, entries)`.
    #[allow(clippy::type_complexity)]
    pub fn read_from<R: Read>(mut r: R) -> Result<(usize, [usize; 3], f64, f64, Vec<Complex64>)> {
        let mut head = [0u8; 48];
        r.read_exact(&mut head)?;
        let u = |i: usize| u64::from_le_bytes(head[i * 8..i * 8 + 8].try_into().unwrap()) as usize;
        let f = |i: usize| f64::from_le_bytes(head[i * 8..i * 8 + 8].try_into().unwrap());
        let rows = u(0);
        let dims = [u(1), u(2), u(3)];
        let (h, energy) = (f(4), f(5));
        let n = rows * dims[0] * dims[1] * dims[2];
        let mut body = vec![0u8; n * 16];
        r.read_exact(&mut body)?;
        let entries = body
            .chunks_exact(16)
            .map(|c| {
                Complex64::new(
                    f64::from_le_bytes(c[..8].try_into().unwrap()),
                    f64::from_le_bytes(c[8..].try_into().unwrap()),
                )
            })
            .collect();
        Ok((rows, dims, h, energy, entries))
    }
}

/// `(R0 density)(x_t)` by midpoint quadrature, corrected where a target sits
/// at a source cell centre.
pub fn apply_r0(energy: f64, density: &ScalarField, targets: &[Vec3]) -> Result<Vec<Complex64>> {
    let k = k_of_energy(energy)?;
    let grid = density.grid();
    let h = grid.spacing();
    let w = grid.cell_volume();
    let diag = ball_integral(k, h);
    let active: Vec<(Vec3, Complex64)> = density
        .values()
        .iter()
        .enumerate()
        .filter(|(_, v)| v.re != 0.0 || v.im != 0.0)
        .map(|(i, v)| (grid.center_of(i), *v))
        .collect();
    Ok(targets
        .par_iter()
        .map(|t| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (y, v) in &active {
                let r = (t - y).norm();
                if r < 0.5 * h {
                    acc += diag * v;
                } else {
                    acc += green(k, r) * v * w;
                }
            }
            acc
        })
        .collect())
}

/// Exact gradient of the quadrature sum `R0 density` at targets away from
/// the density cells (`|x_t - y| >= h/2` for every active cell).
pub fn apply_r0_gradient(energy: f64, density: &ScalarField, targets: &[Vec3]) -> Result<Vec<[Complex64; 3]>> {
    let k = k_of_energy(energy)?;
    let grid = density.grid();
    let h = grid.spacing();
    let w = grid.cell_volume();
    let active: Vec<(Vec3, Complex64)> = density
        .values()
        .iter()
        .enumerate()
        .filter(|(_, v)| v.re != 0.0 || v.im != 0.0)
        .map(|(i, v)| (grid.center_of(i), *v * w))
        .collect();
    targets
        .par_iter()
        .map(|t| {
            let mut acc = [Complex64::new(0.0, 0.0); 3];
            for (y, v) in &active {
                let d = t - y;
                let r = d.norm();
                if r < 0.5 * h {
                    return Err(Error::Domain("gradient target coincides with a density cell".into()));
                }
                // grad G = G (ik - 1/r) (x - y)/r
                let f = green(k, r) * Complex64::new(-1.0 / r, k) * v / r;
                for a in 0..3 {
                    acc[a] += f * d[a];
                }
            }
            Ok(acc)
        })
        .collect()
}

/// Spherical incident field `R0 rho_q(x) = |q| (R0 rho(. - q))(x)` with the
/// source at `q_D = -n D`.
pub fn incident_spherical(rho: &FormFactor, wc: &WaveContext, targets: &[Vec3]) -> Result<Vec<Complex64>> {
    let q = wc.source_position();
    let support = rho.support_box().shifted(&q);
    if let Some(t) = targets.iter().find(|t| support.contains(t)) {
        return Err(Error::Overlap([t.x, t.y, t.z]));
    }
    let density = rho.sample_default(&q, q.norm())?;
    apply_r0(wc.energy(), &density, targets)
}

/// Far-field coefficient on a direction grid.
#[derive(Debug, Clone)]
pub struct FarField {
    pub dirs: DirectionGrid,
    pub values: Vec<Complex64>,
    /// Decay order of the remainder `R0 f - phi e^{ik|x|}/|x|` (in `|x|`).
    pub remainder_order: f64,
}

/// `phi(theta) = (1/2 pi) ∫ e^{-i|k| theta·y} f(y) dy`, the coefficient of
/// `e^{i|k||x|}/|x|` in `R0 f(x)` as `|x| -> ∞`.
pub fn far_field_coefficient(energy: f64, density: &ScalarField, dirs: &DirectionGrid) -> Result<FarField> {
    let k = k_of_energy(energy)?;
    let values = dirs.points().par_iter().map(|t| far_field_at(k, density, t)).collect();
    Ok(FarField { dirs: dirs.clone(), values, remainder_order: -2.0 })
}

pub(crate) fn far_field_at(k: f64, density: &ScalarField, theta: &Vec3) -> Complex64 {
    let g = density.grid();
    let s: Complex64 = density
        .values()
        .iter()
        .enumerate()
        .filter(|(_, v)| v.re != 0.0 || v.im != 0.0)
        .map(|(i, v)| v * Complex64::from_polar(1.0, -k * theta.dot(&g.center_of(i))))
        .sum();
    s * g.cell_volume() / (2.0 * PI)
}

/// Least-squares decay fit of the far-field remainder along one direction.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RemainderFit {
    pub radii: Vec<f64>,
    pub remainders: Vec<f64>,
    /// Log-log slope; `None` when the remainder vanishes to rounding.
    pub slope: Option<f64>,
    pub exact: bool,
}

pub fn far_field_remainder_probe(
    energy: f64,
    density: &ScalarField,
    theta: &Vec3,
    radii: &[f64],
) -> Result<RemainderFit> {
    let k = k_of_energy(energy)?;
    if radii.len() < 2 || radii.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Domain("radii must be strictly increasing with at least two entries".into()));
    }
    let theta = theta / theta.norm();
    let bounds = density.grid().bounds();
    let reach = bounds.lo.norm().max(bounds.hi.norm());
    if radii[0] <= reach {
        return Err(Error::Domain(format!("radius {} lies inside the density support (reach {reach:.3})", radii[0])));
    }
    let phi = far_field_at(k, density, &theta);
    let points: Vec<Vec3> = radii.iter().map(|r| theta * *r).collect();
    let vals = apply_r0(energy, density, &points)?;
    let remainders: Vec<f64> =
        radii.iter().zip(&vals).map(|(r, v)| (v - phi * Complex64::from_polar(1.0, k * r) / *r).norm()).collect();
    let scale = vals.iter().map(|v| v.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let exact = remainders.iter().zip(radii).all(|(e, _)| *e <= 1e-13 * scale);
    let slope = if exact { None } else { Some(loglog_slope(radii, &remainders)) };
    Ok(RemainderFit { radii: radii.to_vec(), remainders, slope, exact })
}

/// `R0` restricted to one grid (targets = source cell centres) as a
/// Toeplitz convolution evaluated by zero-padded FFTs.
pub struct GridConvolution {
    grid: Grid3,
    padded: [usize; 3],
    kernel_hat: Vec<Complex64>,
    fwd: [Arc<dyn Fft<f64>>; 3],
    inv: [Arc<dyn Fft<f64>>; 3],
}

impl GridConvolution {
    pub fn new(energy: f64, grid: &Grid3) -> Result<Self> {
        let k = k_of_energy(energy)?;
        let d = grid.dims();
        let m = [2 * d[0], 2 * d[1], 2 * d[2]];
        let h = grid.spacing();
        let w = grid.cell_volume();
        let diag = ball_integral(k, h);
        let mut table = vec![Complex64::new(0.0, 0.0); m[0] * m[1] * m[2]];
        let wrap = |o: i64, n: usize| -> usize {
            if o >= 0 {
                o as usize
            } else {
                (o + n as i64) as usize
            }
        };
        for a in -(d[0] as i64 - 1)..(d[0] as i64) {
            for b in -(d[1] as i64 - 1)..(d[1] as i64) {
                for c in -(d[2] as i64 - 1)..(d[2] as i64) {
                    let idx = (wrap(a, m[0]) * m[1] + wrap(b, m[1])) * m[2] + wrap(c, m[2]);
                    table[idx] = if a == 0 && b == 0 && c == 0 {
                        diag
                    } else {
                        let r = h * ((a * a + b * b + c * c) as f64).sqrt();
                        w * green(k, r)
                    };
                }
            }
        }
        let mut planner = FftPlanner::new();
        let fwd = [planner.plan_fft_forward(m[0]), planner.plan_fft_forward(m[1]), planner.plan_fft_forward(m[2])];
        let inv = [planner.plan_fft_inverse(m[0]), planner.plan_fft_inverse(m[1]), planner.plan_fft_inverse(m[2])];
        let mut conv = Self { grid: grid.clone(), padded: m, kernel_hat: Vec::new(), fwd, inv };
        conv.fft3(&mut table, true);
        conv.kernel_hat = table;
        Ok(conv)
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    fn fft3(&self, data: &mut [Complex64], forward: bool) {
        let m = self.padded;
        let plans = if forward { &self.fwd } else { &self.inv };
        // last axis: contiguous lines
        data.par_chunks_mut(m[2]).for_each(|line| plans[2].process(line));
        // middle axis
        data.par_chunks_mut(m[1] * m[2]).for_each(|slab| {
            let mut buf = vec![Complex64::new(0.0, 0.0); m[1]];
            for c in 0..m[2] {
                for b in 0..m[1] {
                    buf[b] = slab[b * m[2] + c];
                }
                plans[1].process(&mut buf);
                for b in 0..m[1] {
                    slab[b * m[2] + c] = buf[b];
                }
            }
        });
        // first axis
        let stride = m[1] * m[2];
        let mut buf = vec![Complex64::new(0.0, 0.0); m[0]];
        for col in 0..stride {
            for a in 0..m[0] {
                buf[a] = data[a * stride + col];
            }
            plans[0].process(&mut buf);
            for a in 0..m[0] {
                data[a * stride + col] = buf[a];
            }
        }
    }

    /// `y_i = sum_j K_ij x_j` on the grid.
    pub fn convolve(&self, x: &[Complex64], y: &mut [Complex64]) {
        let d = self.grid.dims();
        let m = self.padded;
        let total = m[0] * m[1] * m[2];
        let mut buf = vec![Complex64::new(0.0, 0.0); total];
        for a in 0..d[0] {
            for b in 0..d[1] {
                let src = (a * d[1] + b) * d[2];
                let dst = (a * m[1] + b) * m[2];
                buf[dst..dst + d[2]].copy_from_slice(&x[src..src + d[2]]);
            }
        }
        self.fft3(&mut buf, true);
        buf.par_iter_mut().zip(self.kernel_hat.par_iter()).for_each(|(v, k)| *v *= k);
        self.fft3(&mut buf, false);
        let scale = 1.0 / total as f64;
        for a in 0..d[0] {
            for b in 0..d[1] {
                let dst = (a * d[1] + b) * d[2];
                let src = (a * m[1] + b) * m[2];
                for c in 0..d[2] {
                    y[dst + c] = buf[src + c] * scale;
                }
            }
        }
    }
}

impl LinearOperator for GridConvolution {
    fn dim(&self) -> usize {
        self.grid.len()
    }
    fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        self.convolve(x, y)
    }
}
