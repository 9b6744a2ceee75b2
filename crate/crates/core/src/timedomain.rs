//! Driven time-dependent Schrödinger equation
//! `i dpsi/dt = (-Δ/2 + V - iW) psi - rho_q e^{-i E t}` on a box with a
//! complex absorbing layer `W`, stepped by Crank–Nicolson with the 7-point
//! Laplacian, plus the analysis of the long-time limit and of charge
//! continuity.

use crate::error::{Error, Result};
use crate::flux::{divergence, flux_field};
use crate::model::{FormFactor, Grid3, Potential, ScalarField, WaveContext};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

type C64 = Complex64;

/// Complex absorbing layer: quartic ramp `W = strength * s^4` over the outer
/// `fraction` of the box on each side, summed over axes.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AbsorberSpec {
    pub fraction: f64,
    /// `None` calibrates the strength for the run's `|k|` and `h`.
    pub strength: Option<f64>,
}

impl Default for AbsorberSpec {
    fn default() -> Self {
        Self { fraction: 0.15, strength: None }
    }
}

impl AbsorberSpec {
    pub fn none() -> Self {
        Self { fraction: 0.15, strength: Some(0.0) }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct AbsorberCalibration {
    pub strength: f64,
    pub layer_width: f64,
    /// Plane-wave reflection at the run's `|k|` (1-D, same stencil).
    pub reflection: f64,
}

fn ramp(x: f64, lo: f64, hi: f64, width: f64) -> f64 {
    if width <= 0.0 {
        return 0.0;
    }
    let s = ((lo + width - x) / width).max((x - (hi - width)) / width).max(0.0);
    s.powi(4)
}

/// `W` at the cell centres of `grid`.
pub fn absorber_profile(grid: &Grid3, fraction: f64, strength: f64) -> Vec<f64> {
    let b = grid.bounds();
    let width = fraction * (b.hi - b.lo).max();
    (0..grid.len())
        .map(|i| {
            if strength == 0.0 {
                return 0.0;
            }
            let x = grid.center_of(i);
            strength * (0..3).map(|a| ramp(x[a], b.lo[a], b.hi[a], width)).sum::<f64>()
        })
        .collect()
}

/// Reflection coefficient of a discrete plane wave `e^{i kappa x}`
/// (`cos(kappa h) = 1 - E h^2`) hitting the quartic layer of given width and
/// strength, terminated by a zero Dirichlet cell.
pub fn reflection_1d(k: f64, h: f64, width: f64, strength: f64) -> f64 {
    let e = 0.5 * k * k;
    let layer = (width / h).round() as usize;
    let free = 4usize;
    let n = layer + free;
    // cell centres x_j = (j + 1/2) h on [0, n h]; the layer is the last `width`
    let hi = n as f64 * h;
    let w: Vec<f64> = (0..n).map(|j| strength * ramp((j as f64 + 0.5) * h, f64::NEG_INFINITY, hi, width)).collect();
    let mut u = vec![C64::new(0.0, 0.0); n + 1];
    u[n] = C64::new(0.0, 0.0);
    u[n - 1] = C64::new(1.0, 0.0);
    for j in (1..n).rev() {
        u[j - 1] = 2.0 * u[j] - u[j + 1] - 2.0 * h * h * C64::new(e, w[j]) * u[j];
    }
    let z = C64::from_polar(1.0, (1.0 - e * h * h).acos());
    let (ua, ub) = (u[0], u[1]);
    // u_j = A z^j + B z^{-j} on the free cells j = 0, 1
    let a = (ub - ua / z) / (z * z - 1.0) * z;
    let bb = (z * ua - ub) / (z * z - 1.0) / z;
    bb.norm() / a.norm()
}

/// Scans the strength on a logarithmic grid and keeps the least reflecting.
pub fn calibrate_absorber(k: f64, h: f64, layer_width: f64) -> AbsorberCalibration {
    let e = 0.5 * k * k;
    let mut best = AbsorberCalibration { strength: 0.0, layer_width, reflection: f64::INFINITY };
    for i in 0..=400 {
        let s = e * 10f64.powf(-3.0 + 6.0 * i as f64 / 400.0);
        let r = reflection_1d(k, h, layer_width, s);
        if r < best.reflection {
            best = AbsorberCalibration { strength: s, layer_width, reflection: r };
        }
    }
    best
}

/// Sum of the six nearest neighbours (zero outside the box).
fn neighbor_sum(x: &[C64], d: [usize; 3], out: &mut [C64]) {
    let (n0, n1, n2) = (d[0], d[1], d[2]);
    let s0 = n1 * n2;
    out.par_chunks_mut(s0).enumerate().for_each(|(i, slab)| {
        for j in 0..n1 {
            for k in 0..n2 {
                let idx = i * s0 + j * n2 + k;
                let mut acc = C64::new(0.0, 0.0);
                if i > 0 {
                    acc += x[idx - s0];
                }
                if i + 1 < n0 {
                    acc += x[idx + s0];
                }
                if j > 0 {
                    acc += x[idx - n2];
                }
                if j + 1 < n1 {
                    acc += x[idx + n2];
                }
                if k > 0 {
                    acc += x[idx - 1];
                }
                if k + 1 < n2 {
                    acc += x[idx + 1];
                }
                slab[j * n2 + k] = acc;
            }
        }
    });
}

/// Snapshot of the evolution.
#[derive(Debug, Clone)]
pub struct EvolutionState {
    pub psi: ScalarField,
    pub t: f64,
}

/// Crank–Nicolson stepper:
/// `(I + i dt/2 H) psi^{n+1} = (I - i dt/2 H) psi^n + i dt/2 (s^n + s^{n+1})`
/// with `s^n = rho_q e^{-i E t_n}`. The implicit system is solved by Jacobi
/// sweeps started from the linear extrapolation of the last two states.
pub struct CrankNicolson {
    grid: Grid3,
    dt: f64,
    energy: f64,
    absorber: Vec<f64>,
    source: Option<Vec<C64>>,
    diag: Vec<C64>,
    psi: Vec<C64>,
    prev: Option<Vec<C64>>,
    t: f64,
    steps: usize,
    tol: f64,
    max_sweeps: usize,
    last_sweeps: usize,
    switch_on: f64,
}

/// Drive envelope `sin^2(pi t / 2T)` for `t < T`, 1 afterwards.
fn envelope(t: f64, switch_on: f64) -> f64 {
    if t >= switch_on {
        1.0
    } else {
        (0.5 * PI * t / switch_on).sin().powi(2)
    }
}

impl CrankNicolson {
    /// `source` is `rho_q` sampled on `grid` (or `None`); `energy` is the
    /// driving frequency `E_k`.
    pub fn new(
        grid: &Grid3,
        dt: f64,
        energy: f64,
        potential: Vec<f64>,
        absorber: Vec<f64>,
        source: Option<Vec<C64>>,
        psi0: Option<&ScalarField>,
    ) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
        }
        let n = grid.len();
        if potential.len() != n || absorber.len() != n || source.as_ref().is_some_and(|s| s.len() != n) {
            return Err(Error::InvalidArgument("potential, absorber and source must match the grid".into()));
        }
        let psi = match psi0 {
            Some(f) if f.grid() == grid => f.values().to_vec(),
            Some(_) => return Err(Error::InvalidGrid("initial state lives on a different grid".into())),
            None => vec![C64::new(0.0, 0.0); n],
        };
        let h = grid.spacing();
        let diag = potential
            .iter()
            .zip(&absorber)
            .map(|(v, w)| 1.0 + C64::new(0.0, 0.5 * dt) * C64::new(3.0 / (h * h) + v, -w))
            .collect();
        Ok(Self {
            grid: grid.clone(),
            dt,
            energy,
            absorber,
            source,
            diag,
            psi,
            prev: None,
            t: 0.0,
            steps: 0,
            tol: 1e-14,
            max_sweeps: 1000,
            last_sweeps: 0,
            switch_on: 0.0,
        })
    }

    /// Relative Jacobi stopping tolerance on the update (default 1e-14).
    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    /// Ramps the drive amplitude smoothly from 0 to 1 over `duration`.
    pub fn with_switch_on(mut self, duration: f64) -> Self {
        self.switch_on = duration.max(0.0);
        self
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn last_sweeps(&self) -> usize {
        self.last_sweeps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    pub fn psi(&self) -> &[C64] {
        &self.psi
    }

    pub fn absorber(&self) -> &[f64] {
        &self.absorber
    }

    pub fn state(&self) -> EvolutionState {
        EvolutionState { psi: ScalarField::new(self.grid.clone(), self.psi.clone()).expect("finite state"), t: self.t }
    }

    pub fn norm(&self) -> f64 {
        (self.psi.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.cell_volume()).sqrt()
    }

    /// Advances one step; returns the number of Jacobi sweeps.
    pub fn step(&mut self) -> Result<usize> {
        let h = self.grid.spacing();
        let d = self.grid.dims();
        let n = self.psi.len();
        let alpha = C64::new(0.0, self.dt / (4.0 * h * h));
        let mut nb = vec![C64::new(0.0, 0.0); n];
        neighbor_sum(&self.psi, d, &mut nb);
        let drive = C64::new(0.0, 0.5 * self.dt)
            * (C64::from_polar(envelope(self.t, self.switch_on), -self.energy * self.t)
                + C64::from_polar(envelope(self.t + self.dt, self.switch_on), -self.energy * (self.t + self.dt)));
        let rhs: Vec<C64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut r = (2.0 - self.diag[i]) * self.psi[i] + alpha * nb[i];
                if let Some(s) = &self.source {
                    r += drive * s[i];
                }
                r
            })
            .collect();
        let mut x: Vec<C64> = match &self.prev {
            Some(p) => self.psi.iter().zip(p).map(|(a, b)| 2.0 * a - b).collect(),
            None => self.psi.clone(),
        };
        let mut next = vec![C64::new(0.0, 0.0); n];
        let mut sweeps = 0;
        loop {
            neighbor_sum(&x, d, &mut nb);
            let (change, size) = next
                .par_iter_mut()
                .enumerate()
                .map(|(i, out)| {
                    *out = (rhs[i] + alpha * nb[i]) / self.diag[i];
                    ((*out - x[i]).norm(), out.norm())
                })
                .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
            std::mem::swap(&mut x, &mut next);
            sweeps += 1;
            if !change.is_finite() {
                return Err(Error::BlowUp { t: self.t + self.dt, growth: f64::INFINITY });
            }
            if change <= self.tol * size || size == 0.0 {
                break;
            }
            if sweeps >= self.max_sweeps {
                return Err(Error::IterationLimit { iterations: sweeps, residual: change / size });
            }
        }
        let old = std::mem::replace(&mut self.psi, x);
        self.prev = Some(old);
        self.t += self.dt;
        self.steps += 1;
        self.last_sweeps = sweeps;
        Ok(sweeps)
    }
}

#[derive(Debug, Clone)]
pub struct EvolveOptions {
    /// Defaults to `0.2 h^2`.
    pub dt: Option<f64>,
    pub t_final: f64,
    pub snapshots_per_period: usize,
    /// Aligned sub-grid on which snapshots are kept; the full grid if `None`.
    pub observe: Option<Grid3>,
    pub absorber: AbsorberSpec,
    pub psi0: Option<ScalarField>,
    /// Driving frequency; `E_k = |k|^2/2` when `None`.
    pub drive_energy: Option<f64>,
    /// Duration of a smooth `sin^2` switch-on of the drive; 0 switches the
    /// source on abruptly at `t = 0`.
    pub switch_on: f64,
}

impl EvolveOptions {
    pub fn new(t_final: f64) -> Self {
        Self {
            dt: None,
            t_final,
            snapshots_per_period: 16,
            observe: None,
            absorber: AbsorberSpec::default(),
            psi0: None,
            drive_energy: None,
            switch_on: 0.0,
        }
    }
}

/// Default source distance for time-domain runs: 0.3 of the box width.
pub fn default_distance(grid: &Grid3) -> f64 {
    let b = grid.bounds();
    0.3 * (b.hi - b.lo).max()
}

/// Strided snapshots of an evolution.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: Grid3,
    pub dt: f64,
    pub energy: f64,
    pub k_mag: f64,
    pub box_width: f64,
    pub times: Vec<f64>,
    pub snapshots: Vec<ScalarField>,
    /// Full-box L2 norms at the snapshot times.
    pub norms: Vec<f64>,
    pub final_state: EvolutionState,
    pub absorber: AbsorberCalibration,
    pub steps: usize,
    pub max_sweeps: usize,
}

#[derive(Serialize)]
struct TrajectorySidecar<'a> {
    grid: &'a Grid3,
    dt: f64,
    energy: f64,
    times: &'a [f64],
    norms: &'a [f64],
    files: Vec<String>,
    absorber: AbsorberCalibration,
}

impl Trajectory {
    pub fn period(&self) -> f64 {
        2.0 * PI / self.energy
    }

    /// One flat binary complex-double file per snapshot and a
    /// `trajectory.json` sidecar.
    pub fn export(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        for (i, s) in self.snapshots.iter().enumerate() {
            let name = format!("snapshot_{i:05}.bin");
            s.write_raw(std::io::BufWriter::new(std::fs::File::create(dir.join(&name))?))?;
            files.push(name);
        }
        let side = TrajectorySidecar {
            grid: &self.grid,
            dt: self.dt,
            energy: self.energy,
            times: &self.times,
            norms: &self.norms,
            files,
            absorber: self.absorber,
        };
        serde_json::to_writer_pretty(std::fs::File::create(dir.join("trajectory.json"))?, &side)?;
        Ok(())
    }
}

/// Runs the driven evolution from `psi0` (zero by default) with the source
/// `|q| rho(x - q)`, `q = -n D`.
pub fn evolve(
    v: &Potential,
    rho: &FormFactor,
    wc: &WaveContext,
    grid: &Grid3,
    opts: &EvolveOptions,
) -> Result<Trajectory> {
    let h = grid.spacing();
    let dt = opts.dt.unwrap_or(0.2 * h * h);
    if !(opts.t_final > 0.0) {
        return Err(Error::InvalidArgument(format!("final time must be positive, got {}", opts.t_final)));
    }
    let energy = opts.drive_energy.unwrap_or(wc.energy());
    let b = grid.bounds();
    let box_width = (b.hi - b.lo).max();
    let layer = opts.absorber.fraction * box_width;
    let absorber = match opts.absorber.strength {
        Some(s) => {
            AbsorberCalibration { strength: s, layer_width: layer, reflection: reflection_1d(wc.k_mag(), h, layer, s) }
        }
        None => calibrate_absorber(wc.k_mag(), h, layer),
    };
    let w = absorber_profile(grid, opts.absorber.fraction, absorber.strength);
    let q = wc.source_position();
    let src = rho.sample(grid, &q, q.norm())?;
    let source = src.values().iter().any(|s| s.norm() > 0.0).then(|| src.into_values());
    let mut cn = CrankNicolson::new(grid, dt, energy, v.sample(grid), w, source, opts.psi0.as_ref())?
        .with_switch_on(opts.switch_on);
    let observe = opts.observe.clone().unwrap_or_else(|| grid.clone());
    let period = 2.0 * PI / energy;
    let stride = ((period / (opts.snapshots_per_period.max(1) as f64 * dt)).floor() as usize).max(1);
    let total = (opts.t_final / dt).round() as usize;
    let mut traj = Trajectory {
        grid: observe.clone(),
        dt,
        energy,
        k_mag: wc.k_mag(),
        box_width,
        times: Vec::new(),
        snapshots: Vec::new(),
        norms: Vec::new(),
        final_state: cn.state(),
        absorber,
        steps: 0,
        max_sweeps: 0,
    };
    let record = |cn: &CrankNicolson, traj: &mut Trajectory| -> Result<()> {
        let norm = cn.norm();
        if let Some(&last) = traj.norms.last() {
            if last > 0.0 && norm > 10.0 * last {
                return Err(Error::BlowUp { t: cn.time(), growth: norm / last });
            }
        }
        traj.times.push(cn.time());
        traj.norms.push(norm);
        traj.snapshots.push(cn.state().psi.restrict(&observe)?);
        Ok(())
    };
    record(&cn, &mut traj)?;
    for s in 1..=total {
        let sweeps = cn.step()?;
        traj.max_sweeps = traj.max_sweeps.max(sweeps);
        if s % stride == 0 {
            record(&cn, &mut traj)?;
        }
    }
    traj.steps = total;
    traj.final_state = cn.state();
    Ok(traj)
}

/// Window average of `psi(t) e^{iEt}` and the residual history
/// `r(t) = || psi(t) e^{iEt} - B ||_w`.
#[derive(Debug, Clone)]
pub struct LimitAmplitudeEstimate {
    pub b_hat: ScalarField,
    pub window: (f64, f64),
    pub history: Vec<(f64, f64)>,
    /// Largest residual over the final three driving periods.
    pub tail_residual: f64,
    /// `tail_residual / ||B||_w`.
    pub relative_tail: f64,
    /// `r` non-increasing over the tail up to `jitter`.
    pub decreasing: bool,
    pub jitter: f64,
    pub passed: bool,
}

impl LimitAmplitudeEstimate {
    /// Columns `t, r`.
    pub fn write_history_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "r"])?;
        for (t, r) in &self.history {
            out.write_record([format!("{t:.17e}"), format!("{r:.17e}")])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Relative jitter allowed in the monotonicity check of the residual tail.
pub const RESIDUAL_JITTER: f64 = 1e-3;

/// Relative weighted-norm tolerance of the tail residual and of the
/// agreement between the limit amplitude and the stationary solution.
pub const LIMIT_AMPLITUDE_TOL: f64 = 0.05;

pub fn extract_limit_amplitude(traj: &Trajectory, window: (f64, f64), sigma: f64) -> Result<LimitAmplitudeEstimate> {
    let (t0, t1) = window;
    let span = traj.times.last().copied().unwrap_or(0.0);
    if !(t0 < t1) || t1 > span + 0.5 * traj.dt {
        return Err(Error::Domain(format!("window [{t0}, {t1}] outside the simulated span [0, {span}]")));
    }
    let crossing = traj.box_width / traj.k_mag;
    if t0 < crossing {
        return Err(Error::Domain(format!("window starts at {t0} before the box crossing time {crossing:.2}")));
    }
    let e = traj.energy;
    let picked: Vec<usize> =
        (0..traj.times.len()).filter(|&i| traj.times[i] >= t0 - 1e-9 && traj.times[i] <= t1 + 1e-9).collect();
    if picked.len() < 2 {
        return Err(Error::Domain("window holds fewer than two snapshots".into()));
    }
    let n = traj.grid.len();
    let mut mean = vec![C64::new(0.0, 0.0); n];
    for &i in &picked {
        let ph = C64::from_polar(1.0, e * traj.times[i]);
        for (m, v) in mean.iter_mut().zip(traj.snapshots[i].values()) {
            *m += v * ph;
        }
    }
    let inv = 1.0 / picked.len() as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    let b_hat = ScalarField::new(traj.grid.clone(), mean)?;
    let bn = b_hat.weighted_norm(sigma);
    let history: Vec<(f64, f64)> = traj
        .times
        .iter()
        .zip(&traj.snapshots)
        .map(|(t, s)| {
            let d = s.scaled(C64::from_polar(1.0, e * t)).sub(&b_hat).expect("same grid");
            (*t, d.weighted_norm(sigma))
        })
        .collect();
    let tail_start = span - 3.0 * 2.0 * PI / e;
    let tail: Vec<f64> = history.iter().filter(|(t, _)| *t >= tail_start).map(|(_, r)| *r).collect();
    let jitter = RESIDUAL_JITTER * bn;
    let decreasing = tail.windows(2).all(|w| w[1] <= w[0] + jitter);
    let tail_residual = tail.iter().cloned().fold(0.0, f64::max);
    let relative_tail = if bn > 0.0 { tail_residual / bn } else { 0.0 };
    Ok(LimitAmplitudeEstimate {
        b_hat,
        window,
        history,
        tail_residual,
        relative_tail,
        decreasing,
        jitter,
        passed: decreasing && relative_tail <= LIMIT_AMPLITUDE_TOL,
    })
}

/// Pointwise continuity residual on an interior sub-grid.
#[derive(Debug, Clone)]
pub struct ContinuityResidual {
    pub grid: Grid3,
    pub values: Vec<f64>,
    pub max: f64,
}

/// `(|psi^{n+1}|^2 - |psi^n|^2)/dt + div j + 2 Im(conj(psi) s)` evaluated
/// at the midpoint `psi = (psi^n + psi^{n+1})/2`, with
/// `s = rho_q (e^{-iEt_n} + e^{-iEt_{n+1}})/2`. Only meaningful where the
/// absorber vanishes; `interior` must keep two cells from the box faces.
pub fn continuity_residual(
    prev: &ScalarField,
    next: &ScalarField,
    dt: f64,
    t_prev: f64,
    source: Option<(&ScalarField, f64)>,
    interior: &Grid3,
) -> Result<ContinuityResidual> {
    let grid = prev.grid();
    if next.grid() != grid {
        return Err(Error::InvalidGrid("snapshots live on different grids".into()));
    }
    let off = grid.aligned_offset(interior).ok_or_else(|| Error::InvalidGrid("interior grid is not aligned".into()))?;
    let (d, id) = (grid.dims(), interior.dims());
    if (0..3).any(|a| off[a] < 2 || off[a] as usize + id[a] + 2 > d[a]) {
        return Err(Error::InvalidGrid("interior grid must stay two cells inside the box".into()));
    }
    let mid: Vec<C64> = prev.values().iter().zip(next.values()).map(|(a, b)| 0.5 * (a + b)).collect();
    let mid = ScalarField::new(grid.clone(), mid)?;
    let div = divergence(&flux_field(&mid)?);
    let drive = source.map(|(rho, e)| {
        let s = 0.5 * (C64::from_polar(1.0, -e * t_prev) + C64::from_polar(1.0, -e * (t_prev + dt)));
        (rho, s)
    });
    let values: Vec<f64> = (0..interior.len())
        .map(|i| {
            let c = interior.unravel(i);
            let g = grid.index(c[0] + off[0] as usize, c[1] + off[1] as usize, c[2] + off[2] as usize);
            let dens = (next.values()[g].norm_sqr() - prev.values()[g].norm_sqr()) / dt;
            let mut r = dens + div[g];
            if let Some((rho, s)) = &drive {
                r += 2.0 * (mid.values()[g].conj() * rho.values()[g] * s).im;
            }
            r
        })
        .collect();
    let max = values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    Ok(ContinuityResidual { grid: interior.clone(), values, max })
}
