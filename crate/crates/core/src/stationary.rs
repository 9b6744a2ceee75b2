//! Stationary scattering: the Lippmann–Schwinger equation
//! `A + R0(V A) = incident` discretised by the Nyström method on a grid
//! covering the potential's support, the far-field amplitude, the on-shell
//! T-matrix and the large-distance study of spherical incidence.

use crate::error::{Error, Result};
use crate::fit::loglog_slope;
use crate::linalg::{self, GmresOptions, LinearOperator};
use crate::model::{DirectionGrid, FormFactor, Grid3, Potential, ScalarField, Vec3, WaveContext};
use crate::resolvent::{self, GridConvolution, KernelMatrix};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;
use std::io::Write;

/// Default weight exponent of the weighted norm `|| <x>^{-sigma} f ||`.
pub const DEFAULT_SIGMA: f64 = 2.6;

/// Relative tolerance of the optical theorem for converged radial potentials.
pub const OPTICAL_THEOREM_TOL: f64 = 0.02;

/// Largest admissible log-log slope of the source-distance error sequences.
pub const DISTANCE_SLOPE: f64 = -0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    /// `N <= dense_limit`: dense LU, otherwise GMRES.
    Auto,
    DenseLu,
    Gmres,
    /// Born series; refused unless the spectral radius of `K V` is below 0.9.
    FixedPoint,
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub tol: f64,
    pub method: Method,
    pub dense_limit: usize,
    pub restart: usize,
    pub max_iter: usize,
    /// Condition estimate above which a warning is attached to the solution.
    pub warn_condition: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-8, method: Method::Auto, dense_limit: 2000, restart: 40, max_iter: 2000, warn_condition: 1e8 }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolverStats {
    /// Method actually used; `None` when the system was the identity.
    pub method: Option<Method>,
    pub iterations: usize,
    /// `||A + K(VA) - incident|| / ||incident||` of the returned field.
    pub residual: f64,
    pub condition_estimate: f64,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Incident {
    Plane { k: [f64; 3] },
    Spherical { source: String, position: [f64; 3] },
}

/// Solution of the discrete Lippmann–Schwinger system on the interaction
/// grid.
#[derive(Debug, Clone)]
pub struct LsSolution {
    pub field: ScalarField,
    /// Incident field on the same grid.
    pub incident_field: ScalarField,
    pub incident: Incident,
    pub wave: WaveContext,
    /// `V` sampled at the grid centres.
    pub potential: Vec<f64>,
    /// `b_D(n)` for spherical incidence, when the source is non-degenerate.
    pub normalization: Option<Complex64>,
    pub stats: SolverStats,
}

impl LsSolution {
    pub fn grid(&self) -> &Grid3 {
        self.field.grid()
    }

    /// `V A` on the grid.
    pub fn density(&self) -> ScalarField {
        let values = self.field.values().iter().zip(&self.potential).map(|(a, v)| a * *v).collect();
        ScalarField::new(self.grid().clone(), values).expect("finite density")
    }

    /// Field normalised to unit plane-wave amplitude: `A` itself for plane
    /// incidence, `A_D = B_D / b_D` for spherical incidence.
    pub fn normalized(&self) -> Result<ScalarField> {
        match self.incident {
            Incident::Plane { .. } => Ok(self.field.clone()),
            Incident::Spherical { .. } => {
                let b = self.normalization.ok_or(Error::DegenerateSource(0.0))?;
                Ok(normalized_ad(&self.field, b))
            }
        }
    }

    /// Scattered part `-R0(V A)` at arbitrary points.
    pub fn scattered(&self, points: &[Vec3]) -> Result<Vec<Complex64>> {
        let out = resolvent::apply_r0(self.wave.energy(), &self.density(), points)?;
        Ok(out.into_iter().map(|v| -v).collect())
    }

    /// Gradient of the scattered part at points away from the grid cells.
    pub fn scattered_gradient(&self, points: &[Vec3]) -> Result<Vec<[Complex64; 3]>> {
        let out = resolvent::apply_r0_gradient(self.wave.energy(), &self.density(), points)?;
        Ok(out.into_iter().map(|g| [-g[0], -g[1], -g[2]]).collect())
    }
}

/// `x -> x + K (V x)` on the grid.
struct LsOperator<'a> {
    conv: &'a GridConvolution,
    v: &'a [f64],
}

impl LinearOperator for LsOperator<'_> {
    fn dim(&self) -> usize {
        self.v.len()
    }
    fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        let vx: Vec<Complex64> = x.iter().zip(self.v).map(|(a, v)| a * *v).collect();
        self.conv.convolve(&vx, y);
        y.iter_mut().zip(x).for_each(|(yy, xx)| *yy += xx);
    }
}

/// `x -> K (V x)`, the Born-series operator.
struct BornOperator<'a>(LsOperator<'a>);

impl LinearOperator for BornOperator<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        self.0.apply(x, y);
        y.iter_mut().zip(x).for_each(|(yy, xx)| *yy -= xx);
    }
}

fn check_grid_covers(v: &Potential, grid: &Grid3) -> Result<()> {
    if v.is_zero() {
        return Ok(());
    }
    let slack = 1e-9 * (1.0 + v.support_radius());
    if !grid.bounds().contains_box(&v.support_box(), slack) {
        return Err(Error::Geometry(format!(
            "grid {:?} does not cover the potential support {:?}",
            grid.bounds(),
            v.support_box()
        )));
    }
    Ok(())
}

fn solve_system(
    energy: f64,
    grid: &Grid3,
    potential: &[f64],
    rhs: &[Complex64],
    opts: &SolverOptions,
) -> Result<(Vec<Complex64>, SolverStats)> {
    if potential.iter().all(|v| *v == 0.0) {
        let stats = SolverStats { method: None, iterations: 0, residual: 0.0, condition_estimate: 1.0, warning: None };
        return Ok((rhs.to_vec(), stats));
    }
    let n = grid.len();
    let conv = GridConvolution::new(energy, grid)?;
    let op = LsOperator { conv: &conv, v: potential };
    let method = match opts.method {
        Method::Auto if n <= opts.dense_limit => Method::DenseLu,
        Method::Auto => Method::Gmres,
        m => m,
    };
    let (x, iterations, condition) = match method {
        Method::DenseLu => {
            let k = KernelMatrix::assemble(energy, grid, &grid.centers())?;
            let m = DMatrix::from_fn(n, n, |i, j| {
                let d = if i == j { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) };
                d + k.entry(i, j) * potential[j]
            });
            let (x, cond) = linalg::dense_solve(m, rhs)?;
            (x, 1, cond)
        }
        Method::Gmres => {
            let diag_k = resolvent::diagonal_correction(energy, grid.spacing());
            let diag: Vec<Complex64> = potential.iter().map(|v| 1.0 + diag_k * *v).collect();
            let g = GmresOptions { tol: opts.tol, restart: opts.restart, max_iter: opts.max_iter };
            let out = linalg::gmres(&op, rhs, Some(&diag), &g)?;
            (out.x, out.iterations, out.condition_estimate)
        }
        Method::FixedPoint => {
            let born = BornOperator(LsOperator { conv: &conv, v: potential });
            let rho = linalg::spectral_radius(&born, 200);
            if rho >= 0.9 {
                return Err(Error::InvalidArgument(format!(
                    "fixed-point iteration needs spectral radius < 0.9, estimated {rho:.3}"
                )));
            }
            let (x, it) = linalg::fixed_point(&born, rhs, 0.1 * opts.tol, opts.max_iter)?;
            (x, it, (1.0 + rho) / (1.0 - rho))
        }
        Method::Auto => unreachable!(),
    };
    let residual = linalg::relative_residual(&op, &x, rhs);
    if !(residual <= opts.tol) {
        return Err(Error::IterationLimit { iterations, residual });
    }
    let warning = (condition > opts.warn_condition)
        .then(|| format!("near-singular system: condition estimate {condition:.3e} (possible interior resonance)"));
    Ok((x, SolverStats { method: Some(method), iterations, residual, condition_estimate: condition, warning }))
}

/// Plane-wave incidence: `(I + K V) A = e^{ik·x}` on `grid`.
pub fn solve_plane(v: &Potential, wc: &WaveContext, grid: &Grid3, opts: &SolverOptions) -> Result<LsSolution> {
    check_grid_covers(v, grid)?;
    let k = wc.k();
    let incident = ScalarField::from_fn(grid.clone(), |x| Complex64::from_polar(1.0, k.dot(x)));
    let potential = v.sample(grid);
    let (x, stats) = solve_system(wc.energy(), grid, &potential, incident.values(), opts)?;
    Ok(LsSolution {
        field: ScalarField::new(grid.clone(), x)?,
        incident_field: incident,
        incident: Incident::Plane { k: [k.x, k.y, k.z] },
        wave: *wc,
        potential,
        normalization: None,
        stats,
    })
}

/// Spherical incidence from the source `|q| rho(x - q)` at `q = -n D`:
/// `(I + K V) B_D = R0 rho_q`.
pub fn solve_spherical(
    v: &Potential,
    rho: &FormFactor,
    wc: &WaveContext,
    grid: &Grid3,
    opts: &SolverOptions,
) -> Result<LsSolution> {
    check_grid_covers(v, grid)?;
    let q = wc.source_position();
    let shifted = rho.support_box().shifted(&q);
    if shifted.intersects(&grid.bounds()) {
        return Err(Error::Geometry(format!(
            "source support {shifted:?} overlaps the interaction grid {:?}",
            grid.bounds()
        )));
    }
    let inc = resolvent::incident_spherical(rho, wc, &grid.centers()).map_err(|e| match e {
        Error::Overlap(p) => Error::Geometry(format!("grid point {p:?} inside the source support")),
        e => e,
    })?;
    let incident = ScalarField::new(grid.clone(), inc)?;
    let potential = v.sample(grid);
    let (x, stats) = solve_system(wc.energy(), grid, &potential, incident.values(), opts)?;
    Ok(LsSolution {
        field: ScalarField::new(grid.clone(), x)?,
        incident_field: incident,
        incident: Incident::Spherical { source: rho.name().to_string(), position: [q.x, q.y, q.z] },
        wave: *wc,
        potential,
        normalization: normalization_bd(rho, wc).ok(),
        stats,
    })
}

/// Relative threshold below which `|b(n)|` counts as degenerate.
pub const DEGENERATE_SOURCE_TOL: f64 = 1e-10;

/// `b(theta) = (1/2 pi) ∫ e^{-i|k| theta·y} rho(y) dy` by the source's
/// own quadrature (the one used for the incident field), checked against
/// the half-spacing quadrature.
pub fn source_far_field(rho: &FormFactor, k_mag: f64, theta: &Vec3) -> Result<Complex64> {
    let coarse = rho.sample_default(&Vec3::zeros(), 1.0)?;
    let b = resolvent::far_field_at(k_mag, &coarse, theta);
    if !rho.is_point() {
        let fine_grid = rho.quadrature_grid(&Vec3::zeros(), rho.quadrature_spacing() / 2.0)?;
        let fine = rho.sample(&fine_grid, &Vec3::zeros(), 1.0)?;
        let bf = resolvent::far_field_at(k_mag, &fine, theta);
        let change = (b - bf).norm();
        let tol = 1e-8 * bf.norm().max(f64::MIN_POSITIVE);
        if change > tol {
            return Err(Error::Resolution { change, tol });
        }
    }
    Ok(b)
}

/// `b_D(n) = b(n) e^{i|k|D}`, the normalisation turning `B_D` into a field
/// with unit plane-wave amplitude.
pub fn normalization_bd(rho: &FormFactor, wc: &WaveContext) -> Result<Complex64> {
    let b = source_far_field(rho, wc.k_mag(), &wc.direction())?;
    let scale = rho.envelope().c.min(1e300).max(1.0);
    if b.norm() <= DEGENERATE_SOURCE_TOL * if rho.is_point() { 1.0 } else { scale } {
        return Err(Error::DegenerateSource(b.norm()));
    }
    Ok(b * Complex64::from_polar(1.0, wc.k_mag() * wc.distance()))
}

/// `A_D = B_D / b_D`.
pub fn normalized_ad(bd: &ScalarField, b_d: Complex64) -> ScalarField {
    bd.scaled(1.0 / b_d)
}

/// Far-field amplitudes `a(theta)` and `sigma(theta) = |a|^2` on a
/// direction grid.
#[derive(Debug, Clone)]
pub struct AmplitudeTable {
    pub dirs: DirectionGrid,
    pub values: Vec<Complex64>,
    pub sigma: Vec<f64>,
    pub wave: WaveContext,
}

impl AmplitudeTable {
    pub fn new(dirs: DirectionGrid, values: Vec<Complex64>, wave: WaveContext) -> Self {
        let sigma = values.iter().map(|a| a.norm_sqr()).collect();
        Self { dirs, values, sigma, wave }
    }

    /// `∮ sigma dOmega` by the grid's quadrature.
    pub fn total_cross_section(&self) -> f64 {
        self.dirs.integrate_values(&self.sigma)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|a| a.norm()).fold(0.0, f64::max)
    }

    /// Columns `theta_x, theta_y, theta_z, re_a, im_a, sigma`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["theta_x", "theta_y", "theta_z", "re_a", "im_a", "sigma"])?;
        for ((t, a), s) in self.dirs.points().iter().zip(&self.values).zip(&self.sigma) {
            out.write_record([t.x, t.y, t.z, a.re, a.im, *s].iter().map(|v| format!("{v:.17e}")))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `S(theta) = ∫ e^{-i|k| theta·y} V(y) A(y) dy` on the solution grid.
fn interaction_sum(sol: &LsSolution, field: &ScalarField, theta: &Vec3) -> Complex64 {
    let g = sol.grid();
    let k = sol.wave.k_mag();
    let s: Complex64 = field
        .values()
        .iter()
        .zip(&sol.potential)
        .enumerate()
        .filter(|(_, (_, v))| **v != 0.0)
        .map(|(i, (a, v))| a * *v * Complex64::from_polar(1.0, -k * theta.dot(&g.center_of(i))))
        .sum();
    s * g.cell_volume()
}

/// `a(theta) = -(1/2 pi) ∫ e^{-i|k| theta·y} V A dy`, using `A_D` for
/// spherical incidence.
pub fn amplitude(sol: &LsSolution, dirs: &DirectionGrid) -> Result<AmplitudeTable> {
    let field = sol.normalized()?;
    let values =
        dirs.points().par_iter().map(|t| -interaction_sum(sol, &field, &(t / t.norm())) / (2.0 * PI)).collect();
    Ok(AmplitudeTable::new(dirs.clone(), values, sol.wave))
}

/// Forward amplitude against the total cross section.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct OpticalTheorem {
    pub forward_im: f64,
    /// `(|k| / 4 pi) ∮ sigma dOmega`.
    pub predicted: f64,
    /// `|forward_im - predicted| / predicted`; zero when both vanish.
    pub relative_defect: f64,
    pub passed: bool,
}

/// Evaluates `Im a(k, n)` in the exact incident direction and compares it
/// with the total cross section integrated over `dirs`.
pub fn optical_theorem(sol: &LsSolution, dirs: &DirectionGrid) -> Result<OpticalTheorem> {
    let n = sol.wave.direction();
    let forward = DirectionGrid::new("forward", vec![n], vec![4.0 * PI])?;
    let forward_im = amplitude(sol, &forward)?.values[0].im;
    let predicted = sol.wave.k_mag() / (4.0 * PI) * amplitude(sol, dirs)?.total_cross_section();
    let diff = (forward_im - predicted).abs();
    let relative_defect = if diff == 0.0 { 0.0 } else { diff / predicted.abs() };
    Ok(OpticalTheorem { forward_im, predicted, relative_defect, passed: relative_defect <= OPTICAL_THEOREM_TOL })
}

/// On-shell T-matrix value `T(k', k)` with `k' = |k| theta`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TMatrixValue {
    pub k_out: [f64; 3],
    pub k_in: [f64; 3],
    pub value: Complex64,
}

/// `T(|k| theta, k) = (2 pi)^{-3} ∫ e^{-i|k| theta·y} V A dy`, so that
/// `a = -4 pi^2 T` with the same quadrature.
pub fn t_matrix(sol: &LsSolution, theta: &Vec3) -> Result<TMatrixValue> {
    if !(theta.norm() > 0.0) {
        return Err(Error::InvalidArgument("direction must be non-zero".into()));
    }
    let theta = theta / theta.norm();
    let field = sol.normalized()?;
    let s = interaction_sum(sol, &field, &theta);
    let k_out = theta * sol.wave.k_mag();
    let k_in = sol.wave.k();
    Ok(TMatrixValue {
        k_out: [k_out.x, k_out.y, k_out.z],
        k_in: [k_in.x, k_in.y, k_in.z],
        value: s / (8.0 * PI * PI * PI),
    })
}

/// Amplitude from a T-matrix value.
pub fn amplitude_from_t(t: &TMatrixValue) -> Complex64 {
    -4.0 * PI * PI * t.value
}

/// Large-distance study of spherical incidence against plane incidence.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub distances: Vec<f64>,
    /// `sup |incident_D / b_D - e^{ik·x}|` over the grid.
    pub err_incident: Vec<f64>,
    /// `|| A_D - A ||_w` with weight `<x>^{-sigma}`.
    pub err_field: Vec<f64>,
    /// `max_theta |a_D(theta) - a(theta)|`.
    pub err_amp: Vec<f64>,
    pub sigma: f64,
    pub slopes: Slopes,
    pub monotone: Monotone,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Slopes {
    pub incident: f64,
    pub field: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Monotone {
    pub incident: bool,
    pub field: bool,
    pub amplitude: bool,
}

impl ConvergenceReport {
    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }
}

fn decreasing_after_first(v: &[f64]) -> bool {
    v.iter().skip(1).zip(v.iter().skip(2)).all(|(a, b)| b < a)
}

/// Solves with plane incidence once and with spherical incidence for each
/// distance, tracking the three error sequences. Non-monotone sequences or
/// slopes above -0.8 are reported through `passed`, not as errors.
#[allow(clippy::too_many_arguments)]
pub fn convergence_study(
    v: &Potential,
    rho: &FormFactor,
    wc: &WaveContext,
    distances: &[f64],
    grid: &Grid3,
    dirs: &DirectionGrid,
    sigma: f64,
    opts: &SolverOptions,
) -> Result<ConvergenceReport> {
    if distances.len() < 2 || distances.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("distances must be strictly increasing, at least two".into()));
    }
    let plane = solve_plane(v, wc, grid, opts)?;
    let a_plane = amplitude(&plane, dirs)?;
    let mut report = ConvergenceReport {
        distances: distances.to_vec(),
        err_incident: Vec::new(),
        err_field: Vec::new(),
        err_amp: Vec::new(),
        sigma,
        slopes: Slopes { incident: 0.0, field: 0.0, amplitude: 0.0 },
        monotone: Monotone { incident: false, field: false, amplitude: false },
        passed: false,
    };
    for &d in distances {
        let wcd = wc.with_distance(d)?;
        let sol = solve_spherical(v, rho, &wcd, grid, opts)?;
        let b = sol.normalization.ok_or(Error::DegenerateSource(0.0))?;
        let inc = normalized_ad(&sol.incident_field, b);
        let e_inc =
            inc.values().iter().zip(plane.incident_field.values()).map(|(a, p)| (a - p).norm()).fold(0.0, f64::max);
        let e_field = normalized_ad(&sol.field, b).sub(&plane.field)?.weighted_norm(sigma);
        let a_d = amplitude(&sol, dirs)?;
        let e_amp = a_d.values.iter().zip(&a_plane.values).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        report.err_incident.push(e_inc);
        report.err_field.push(e_field);
        report.err_amp.push(e_amp);
    }
    report.slopes = Slopes {
        incident: loglog_slope(distances, &report.err_incident),
        field: loglog_slope(distances, &report.err_field),
        amplitude: loglog_slope(distances, &report.err_amp),
    };
    report.monotone = Monotone {
        incident: decreasing_after_first(&report.err_incident),
        field: decreasing_after_first(&report.err_field),
        amplitude: decreasing_after_first(&report.err_amp),
    };
    // the amplitude error vanishes identically for V = 0
    let amp_ok = report.err_amp.iter().all(|e| *e == 0.0)
        || (report.monotone.amplitude && report.slopes.amplitude <= DISTANCE_SLOPE);
    report.passed = report.monotone.incident
        && report.slopes.incident <= DISTANCE_SLOPE
        && report.monotone.field
        && report.slopes.field <= DISTANCE_SLOPE
        && amp_ok;
    Ok(report)
}
