//! Partial-wave reference path for spherically symmetric potentials:
//! Numerov integration of the radial equation
//! `u'' + (k^2 - 2V(r) - l(l+1)/r^2) u = 0`, phase shifts by matching to
//! Riccati–Bessel functions, the partial-wave amplitude, and a zero-energy
//! node count of bound states. Shares no code with the Nyström path.

use crate::error::{Error, Result};
use crate::model::{DirectionGrid, Potential, WaveContext};
use crate::stationary::AmplitudeTable;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use std::io::Write;

#[derive(Debug, Clone)]
pub struct PhaseShiftOptions {
    /// Largest angular momentum tried before giving up.
    pub l_max: usize,
    /// Outer matching radius; defaults to three support radii.
    pub r_max: Option<f64>,
    pub dr: f64,
    /// The series stops once `|delta_l|` falls below this.
    pub stop_tol: f64,
}

impl Default for PhaseShiftOptions {
    fn default() -> Self {
        Self { l_max: 80, r_max: None, dr: 1e-3, stop_tol: 1e-8 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseShiftSet {
    pub k: f64,
    pub deltas: Vec<f64>,
    /// `|delta_{L_max}|` of the last channel kept.
    pub truncation: f64,
}

impl PhaseShiftSet {
    pub fn l_max(&self) -> usize {
        self.deltas.len().saturating_sub(1)
    }

    /// `sigma_tot = (4 pi / k^2) sum (2l+1) sin^2 delta_l`.
    pub fn total_cross_section(&self) -> f64 {
        let s: f64 = self.deltas.iter().enumerate().map(|(l, d)| (2 * l + 1) as f64 * d.sin().powi(2)).sum();
        4.0 * std::f64::consts::PI * s / (self.k * self.k)
    }

    /// Columns `l, delta`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["l", "delta"])?;
        for (l, d) in self.deltas.iter().enumerate() {
            out.write_record([l.to_string(), format!("{d:.17e}")])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Spherical Bessel functions `j_0..j_n` at `x > 0` by downward recurrence,
/// normalised against the closed forms of `j_0` or `j_1`.
pub fn spherical_bessel_j(n: usize, x: f64) -> Vec<f64> {
    let start = n + 20 + (x.abs() + 10.0 * x.abs().sqrt()) as usize;
    let mut out = vec![0.0; n + 1];
    let (mut jp, mut j) = (0.0f64, 1e-300f64);
    for l in (0..=start).rev() {
        // j_{l-1} = (2l+1)/x j_l - j_{l+1}
        if l <= n {
            out[l] = j;
        }
        if l == 0 {
            break;
        }
        let jm = (2 * l + 1) as f64 / x * j - jp;
        jp = j;
        j = jm;
        if j.abs() > 1e250 {
            jp *= 1e-250;
            j *= 1e-250;
            out.iter_mut().for_each(|v| *v *= 1e-250);
        }
    }
    let j0 = x.sin() / x;
    let j1 = x.sin() / (x * x) - x.cos() / x;
    let scale = if j0.abs() > j1.abs() { j0 / out[0] } else { j1 / out[1.min(n)] };
    if n == 0 {
        return vec![j0];
    }
    out.iter_mut().for_each(|v| *v *= scale);
    out
}

/// Spherical Neumann functions `y_0..y_n` (`y_0 = -cos x / x`) by upward
/// recurrence.
pub fn spherical_bessel_y(n: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    out[0] = -x.cos() / x;
    if n >= 1 {
        out[1] = -x.cos() / (x * x) - x.sin() / x;
    }
    for l in 1..n {
        out[l + 1] = (2 * l + 1) as f64 / x * out[l] - out[l - 1];
    }
    out
}

/// Legendre polynomials `P_0..P_n` at `x`.
pub fn legendre(n: usize, x: f64) -> Vec<f64> {
    let mut p = vec![1.0; n + 1];
    if n >= 1 {
        p[1] = x;
    }
    for l in 1..n {
        p[l + 1] = ((2 * l + 1) as f64 * x * p[l] - l as f64 * p[l - 1]) / (l + 1) as f64;
    }
    p
}

/// Numerov solution of `u'' = f(r) u` on `r_i = i dr`, regular at the
/// origin (`u ~ r^{l+1}`). Returns samples at `r_i`, `i = 0..=n`, rescaled
/// to avoid overflow (only ratios are meaningful).
fn numerov_regular<F: Fn(f64) -> f64>(f: F, l: usize, dr: f64, n: usize, c0: f64) -> Vec<f64> {
    let mut u = vec![0.0; n + 1];
    let h2 = dr * dr / 12.0;
    // series u = r^{l+1} (1 + c0 r^2 / (2(2l+3)))
    let series = |r: f64| (1.0 + c0 * r * r / (2.0 * (2 * l + 3) as f64)) * (r / dr).powi(l as i32 + 1);
    u[1] = series(dr) * 1e-100;
    u[2] = series(2.0 * dr) * 1e-100;
    let mut w1 = (1.0 - h2 * f(dr)) * u[1];
    let mut w2 = (1.0 - h2 * f(2.0 * dr)) * u[2];
    for i in 2..n {
        let r = i as f64 * dr;
        let w3 = 2.0 * w2 - w1 + 12.0 * h2 * f(r) * u[i];
        let next = w3 / (1.0 - h2 * f(r + dr));
        u[i + 1] = next;
        w1 = w2;
        w2 = w3;
        if next.abs() > 1e200 {
            for v in u.iter_mut().take(i + 2) {
                *v *= 1e-200;
            }
            w1 *= 1e-200;
            w2 *= 1e-200;
        }
    }
    u
}

fn radial_profile(v: &Potential) -> Result<std::sync::Arc<dyn Fn(f64) -> f64 + Send + Sync + '_>> {
    if v.is_zero() {
        return Ok(std::sync::Arc::new(|_| 0.0));
    }
    let prof = v
        .radial_profile()
        .ok_or_else(|| Error::InvalidPotential(format!("{} is not spherically symmetric", v.name())))?;
    Ok(std::sync::Arc::new(prof))
}

fn phase_shift_l(v: &(dyn Fn(f64) -> f64 + Sync), k: f64, l: usize, r_max: f64, dr: f64, r_in: f64) -> Result<f64> {
    let n = (r_max / dr).ceil() as usize;
    let dr = r_max / n as f64;
    let ll = (l * (l + 1)) as f64;
    let f = |r: f64| 2.0 * v(r) + ll / (r * r) - k * k;
    let u = numerov_regular(f, l, dr, n, 2.0 * v(0.0) - k * k);
    // matching radii a quarter wavelength apart, both beyond the potential
    let quarter = ((0.5 * std::f64::consts::PI / k) / dr).round().max(1.0) as usize;
    let i2 = n;
    let i1 = n.saturating_sub(quarter);
    let r1 = i1 as f64 * dr;
    if r1 <= r_in {
        return Err(Error::Matching { l });
    }
    let r2 = r_max;
    let (u1, u2) = (u[i1], u[i2]);
    let j1 = spherical_bessel_j(l, k * r1)[l] * k * r1;
    let j2 = spherical_bessel_j(l, k * r2)[l] * k * r2;
    let n1 = spherical_bessel_y(l, k * r1)[l] * k * r1;
    let n2 = spherical_bessel_y(l, k * r2)[l] * k * r2;
    let num = u1 * j2 - u2 * j1;
    let den = u1 * n2 - u2 * n1;
    let scale = (u1.abs() + u2.abs()) * (j1.abs() + j2.abs() + n1.abs() + n2.abs());
    if !(num.abs() + den.abs() > 1e-12 * scale) || !num.is_finite() || !den.is_finite() {
        return Err(Error::Matching { l });
    }
    Ok((num / den).atan())
}

/// RMS amplitude disagreement, relative to the largest oracle amplitude,
/// tolerated between the partial-wave and the three-dimensional solvers.
pub const ORACLE_AGREEMENT_TOL: f64 = 0.01;

/// `sqrt(mean |a - a_ref|^2) / max |a_ref|` over a common direction grid.
pub fn relative_rms(a: &AmplitudeTable, reference: &AmplitudeTable) -> Result<f64> {
    if a.values.len() != reference.values.len() || a.values.is_empty() {
        return Err(Error::InvalidArgument("amplitude tables differ in length".into()));
    }
    let ms =
        a.values.iter().zip(&reference.values).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>() / a.values.len() as f64;
    let scale = reference.max_abs();
    Ok(if ms == 0.0 { 0.0 } else { ms.sqrt() / scale })
}

/// Phase shifts `delta_l` of a radial potential at wavenumber `k`.
pub fn phase_shifts(v: &Potential, k: f64, opts: &PhaseShiftOptions) -> Result<PhaseShiftSet> {
    if !(k > 0.0) {
        return Err(Error::InvalidArgument(format!("|k| must be positive, got {k}")));
    }
    let prof = radial_profile(v)?;
    if v.is_zero() {
        return Ok(PhaseShiftSet { k, deltas: vec![0.0], truncation: 0.0 });
    }
    let support = v.support_radius();
    let r_max = opts.r_max.unwrap_or(3.0 * support);
    if r_max <= support {
        return Err(Error::InvalidArgument(format!("r_max {r_max} must exceed the support radius {support}")));
    }
    // classical turning index: below it phase shifts need not decrease
    let l_turn = (k * support).ceil() as usize;
    let mut deltas: Vec<f64> = Vec::new();
    const BATCH: usize = 8;
    loop {
        let lo = deltas.len();
        if lo > opts.l_max {
            let last = deltas.last().copied().unwrap_or(0.0).abs();
            return Err(Error::Truncation { l_max: opts.l_max, last });
        }
        let hi = (lo + BATCH).min(opts.l_max + 1);
        let batch: Vec<Result<f64>> =
            (lo..hi).into_par_iter().map(|l| phase_shift_l(&*prof, k, l, r_max, opts.dr, support)).collect();
        for (l, d) in (lo..hi).zip(batch) {
            let d = d?;
            deltas.push(d);
            if l >= l_turn && d.abs() < opts.stop_tol {
                return Ok(PhaseShiftSet { k, truncation: d.abs(), deltas });
            }
        }
    }
}

/// `f(theta) = (1/k) sum (2l+1) e^{i delta_l} sin delta_l P_l(cos theta)`,
/// with `theta` measured from the incident direction of `wc`.
pub fn partial_wave_amplitude(
    ps: &PhaseShiftSet,
    wc: &WaveContext,
    dirs: &DirectionGrid,
    tol: f64,
) -> Result<AmplitudeTable> {
    if ps.truncation > tol {
        return Err(Error::Truncation { l_max: ps.l_max(), last: ps.truncation });
    }
    let n = wc.direction();
    let coeffs: Vec<Complex64> = ps
        .deltas
        .iter()
        .enumerate()
        .map(|(l, d)| Complex64::from_polar(1.0, *d) * d.sin() * (2 * l + 1) as f64 / ps.k)
        .collect();
    let values = dirs
        .points()
        .iter()
        .map(|t| {
            let p = legendre(coeffs.len() - 1, (t.dot(&n) / t.norm()).clamp(-1.0, 1.0));
            coeffs.iter().zip(&p).map(|(c, pl)| c * *pl).sum()
        })
        .collect();
    Ok(AmplitudeTable::new(dirs.clone(), values, *wc))
}

/// Number of bound states (with multiplicity `2l+1`), counted as nodes of
/// the zero-energy regular solution in each channel, including a node
/// beyond `r_max` when the free continuation `a r^{l+1} + c r^{-l}` still
/// changes sign.
pub fn bound_state_count(v: &Potential) -> Result<usize> {
    bound_state_count_with(v, None, 1e-3)
}

pub fn bound_state_count_with(v: &Potential, r_max: Option<f64>, dr: f64) -> Result<usize> {
    if v.is_zero() {
        return Ok(0);
    }
    let prof = radial_profile(v)?;
    let r_max = r_max.unwrap_or(3.0 * v.support_radius());
    let n = (r_max / dr).ceil() as usize;
    let dr = r_max / n as f64;
    let mut total = 0usize;
    for l in 0.. {
        let ll = (l * (l + 1)) as f64;
        let u = numerov_regular(|r| 2.0 * prof(r) + ll / (r * r), l, dr, n, 2.0 * prof(0.0));
        let mut nodes = u[1..].windows(2).filter(|w| w[0] != 0.0 && w[0].signum() != w[1].signum()).count();
        let (um, up) = (u[n - 1], u[n]);
        let du = (up - um) / dr;
        let r = r_max - 0.5 * dr;
        let uu = 0.5 * (up + um);
        // coefficient of r^{l+1} in the free continuation
        let a = l as f64 * uu + r * du;
        if a != 0.0 && a.signum() != uu.signum() {
            nodes += 1;
        }
        total += (2 * l + 1) * nodes;
        if nodes == 0 {
            break;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Vec3;
    use std::f64::consts::PI;

    #[test]
    fn bessel_closed_forms() {
        for &x in &[0.3, 1.0, 4.7, 12.0, 30.0] {
            let j = spherical_bessel_j(4, x);
            let y = spherical_bessel_y(4, x);
            let (s, c) = x.sin_cos();
            assert!((j[0] - s / x).abs() < 1e-14);
            assert!((j[2] - ((3.0 / (x * x) - 1.0) * s / x - 3.0 * c / (x * x))).abs() < 1e-12);
            assert!((y[2] - (-(3.0 / (x * x) - 1.0) * c / x - 3.0 * s / (x * x))).abs() < 1e-12);
            // Wronskian j_l y_{l-1} - j_{l-1} y_l = 1/x^2
            for l in 1..=4 {
                assert!((j[l] * y[l - 1] - j[l - 1] * y[l] - 1.0 / (x * x)).abs() < 1e-10 / (x * x));
            }
        }
    }

    #[test]
    fn legendre_values() {
        let p = legendre(3, 0.5);
        assert_eq!(p[0], 1.0);
        assert_eq!(p[1], 0.5);
        assert!((p[2] - (-0.125)).abs() < 1e-15);
        assert!((p[3] - (-0.4375)).abs() < 1e-15);
    }

    #[test]
    fn zero_potential_has_zero_phase_shifts() {
        let ps = phase_shifts(&Potential::zero(), 1.0, &PhaseShiftOptions::default()).unwrap();
        assert!(ps.deltas.iter().all(|d| *d == 0.0));
        let wc = WaveContext::plane(Vec3::z()).unwrap();
        let a = partial_wave_amplitude(&ps, &wc, &DirectionGrid::lebedev(7).unwrap(), 1e-6).unwrap();
        assert!(a.values.iter().all(|v| v.norm() == 0.0));
        assert_eq!(bound_state_count(&Potential::zero()).unwrap(), 0);
    }

    #[test]
    fn weak_well_matches_born_phase_shifts() {
        let g = -1e-3;
        let v = Potential::gaussian_well(g, 1.0).unwrap();
        let k = 1.0;
        let ps = phase_shifts(&v, k, &PhaseShiftOptions::default()).unwrap();
        for l in 0..3 {
            // -(2/k) ∫ V (kr j_l(kr))^2 dr by the trapezoid rule
            let n = 20_000;
            let rmax = 10.0;
            let born: f64 = (1..n)
                .map(|i| {
                    let r = rmax * i as f64 / n as f64;
                    let jj = spherical_bessel_j(l, k * r)[l] * k * r;
                    g * (-r * r).exp() * jj * jj
                })
                .sum::<f64>()
                * (rmax / n as f64)
                * (-2.0 / k);
            assert!((ps.deltas[l] - born).abs() < 5e-3 * born.abs() + 1e-12, "l={l}: {} vs {born}", ps.deltas[l]);
        }
    }

    #[test]
    fn numerov_is_fourth_order() {
        let v = Potential::gaussian_well(-2.0, 1.0).unwrap();
        let run = |dr: f64| {
            let o = PhaseShiftOptions { dr, ..PhaseShiftOptions::default() };
            phase_shifts(&v, 1.0, &o).unwrap().deltas[0]
        };
        let (a, b, c) = (run(0.02), run(0.01), run(0.005));
        let ratio = (a - b).abs() / (b - c).abs();
        // at least the fourth-order reduction
        assert!(ratio > 14.0, "ratio {ratio}");
    }

    #[test]
    fn optical_theorem_is_an_identity_for_partial_waves() {
        let v = Potential::gaussian_well(-1.0, 1.0).unwrap();
        let wc = WaveContext::plane(Vec3::new(0.0, 0.0, 1.5)).unwrap();
        let ps = phase_shifts(&v, 1.5, &PhaseShiftOptions::default()).unwrap();
        let dirs = DirectionGrid::lebedev(17).unwrap();
        let a = partial_wave_amplitude(&ps, &wc, &dirs, 1e-6).unwrap();
        let sigma_tot = a.total_cross_section();
        assert!((sigma_tot - ps.total_cross_section()).abs() < 1e-10 * sigma_tot);
        let fwd = partial_wave_amplitude(
            &ps,
            &wc,
            &DirectionGrid::new("forward", vec![Vec3::z()], vec![4.0 * PI]).unwrap(),
            1e-6,
        )
        .unwrap();
        assert!((fwd.values[0].im - 1.5 / (4.0 * PI) * sigma_tot).abs() < 1e-12);
    }

    #[test]
    fn s_wave_total_cross_section() {
        let ps = PhaseShiftSet { k: 0.7, deltas: vec![0.4], truncation: 0.0 };
        let wc = WaveContext::plane(Vec3::new(0.7, 0.0, 0.0)).unwrap();
        let a = partial_wave_amplitude(&ps, &wc, &DirectionGrid::lebedev(11).unwrap(), 1e-6).unwrap();
        let expect = 4.0 * PI / 0.49 * 0.4f64.sin().powi(2);
        assert!((a.total_cross_section() - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn bound_state_counts() {
        // critical depth of exp(-r^2) for one s-state is g ≈ -1.342
        assert_eq!(bound_state_count(&Potential::gaussian_well(-1.0, 1.0).unwrap()).unwrap(), 0);
        assert_eq!(bound_state_count(&Potential::gaussian_well(-1.3, 1.0).unwrap()).unwrap(), 0);
        assert_eq!(bound_state_count(&Potential::gaussian_well(-1.4, 1.0).unwrap()).unwrap(), 1);
        assert!(bound_state_count(&Potential::gaussian_well(-10.0, 1.0).unwrap()).unwrap() >= 4);
        assert_eq!(bound_state_count(&Potential::gaussian_well(2.0, 1.0).unwrap()).unwrap(), 0);
    }

    #[test]
    fn phase_shift_csv() {
        let ps = PhaseShiftSet { k: 1.0, deltas: vec![0.5, 0.25], truncation: 0.25 };
        let mut buf = Vec::new();
        ps.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("l,delta\n0,"));
    }
}
