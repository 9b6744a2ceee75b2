//! Configuration-driven experiments: a TOML file names a potential, a
//! source, the wave context, grids and tolerances, and one experiment kind.
//! [`run`] executes the experiment, writes its CSV/JSON artifacts into the
//! output directory and returns a report whose verdict is the conjunction
//! of the module contracts it exercised.

use crate::error::{Error, Result};
use crate::flux::{self, FAR_FIELD_SLOPE, FAR_FIELD_TOL};
use crate::model::{
    validate_form_factor, validate_potential, wiener_check, DirectionGrid, FormFactor, Grid3, Potential, Vec3,
    WaveContext,
};
use crate::oracle::{self, PhaseShiftOptions, ORACLE_AGREEMENT_TOL};
use crate::stationary::{self, Method, SolverOptions, DEGENERATE_SOURCE_TOL, DISTANCE_SLOPE};
use crate::timedomain::{self, AbsorberSpec, EvolveOptions, LIMIT_AMPLITUDE_TOL};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

/// Marker file written next to partial artifacts when a run fails.
pub const FAILED_MARKER: &str = "FAILED";
/// Report file name inside the output directory.
pub const REPORT_FILE: &str = "report.json";
/// Wall-clock timing, kept out of the report so reports stay reproducible.
pub const TIMING_FILE: &str = "timing.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExperimentKind {
    #[serde(rename = "cross-section")]
    CrossSection,
    #[serde(rename = "convergence-D")]
    ConvergenceD,
    #[serde(rename = "limiting-amplitude")]
    LimitingAmplitude,
    #[serde(rename = "flux-check")]
    FluxCheck,
    #[serde(rename = "oracle-compare")]
    OracleCompare,
    #[serde(rename = "hypothesis-check")]
    HypothesisCheck,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::ConvergenceD,
        ExperimentKind::CrossSection,
        ExperimentKind::FluxCheck,
        ExperimentKind::HypothesisCheck,
        ExperimentKind::LimitingAmplitude,
        ExperimentKind::OracleCompare,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::CrossSection => "cross-section",
            ExperimentKind::ConvergenceD => "convergence-D",
            ExperimentKind::LimitingAmplitude => "limiting-amplitude",
            ExperimentKind::FluxCheck => "flux-check",
            ExperimentKind::OracleCompare => "oracle-compare",
            ExperimentKind::HypothesisCheck => "hypothesis-check",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Catalog potentials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    GaussianWell { g: f64, width: f64 },
    YukawaRegularized { g: f64, mu: f64, core: f64 },
}

/// Catalog sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpec {
    GaussianSource { amplitude: f64, width: f64 },
}

impl Default for SourceSpec {
    fn default() -> Self {
        SourceSpec::GaussianSource { amplitude: 1.0, width: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveSpec {
    /// Wavenumbers `|k|`; every experiment loops over them.
    pub k: Vec<f64>,
    /// Incident direction (normalised on use).
    pub direction: [f64; 3],
    /// Source distance for spherical incidence.
    pub distance: f64,
    /// Distance sequence of the convergence study.
    pub distances: Vec<f64>,
}

impl Default for WaveSpec {
    fn default() -> Self {
        Self { k: vec![1.0], direction: [0.0, 0.0, 1.0], distance: 200.0, distances: vec![50.0, 100.0, 200.0, 400.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    /// Cells per axis of the interaction grid covering the potential.
    pub cells: usize,
    /// Relative magnitude at which the potential's support box is cut.
    pub support_tol: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { cells: 24, support_tol: 1e-12 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodSpec {
    Auto,
    DenseLu,
    Gmres,
    FixedPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub tol: f64,
    pub method: MethodSpec,
    pub dense_limit: usize,
    pub max_iter: usize,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let d = SolverOptions::default();
        Self { tol: d.tol, method: MethodSpec::Auto, dense_limit: d.dense_limit, max_iter: d.max_iter }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum DirectionSpec {
    Lebedev { degree: usize },
    Product { n_theta: usize, n_phi: usize },
}

impl Default for DirectionSpec {
    fn default() -> Self {
        DirectionSpec::Lebedev { degree: 17 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSpec {
    /// Half width of the cubic evolution box centred at the origin.
    pub half_width: f64,
    pub cells: usize,
    /// Time step in units of `h^2`.
    pub dt_factor: f64,
    /// Simulated span in driving periods.
    pub periods: f64,
    /// Averaging window length in driving periods, ending at the final time.
    pub window_periods: f64,
    /// Absorbing-layer thickness as a fraction of the box width.
    pub absorber_fraction: f64,
    /// Fixed absorber strength; calibrated when absent.
    pub absorber_strength: Option<f64>,
    /// Drive at the lattice frequency `(1 - cos(|k| h)) / h^2` so that the
    /// discrete wavenumber along the incidence axis equals `|k|`.
    pub lattice_frequency: bool,
    /// Length of the sin² ramp of the drive, in driving periods; 0 starts
    /// the drive abruptly.
    pub switch_on_periods: f64,
}

impl Default for TimeSpec {
    fn default() -> Self {
        Self {
            half_width: 15.0,
            cells: 64,
            dt_factor: 0.2,
            periods: 6.0,
            window_periods: 3.0,
            absorber_fraction: 0.15,
            absorber_strength: None,
            lattice_frequency: false,
            switch_on_periods: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FluxSpec {
    /// Probe radii as multiples of the potential's support radius.
    pub radius_factors: Vec<f64>,
    /// Spacing of the finite-difference probe stencil.
    pub probe_h: f64,
}

impl Default for FluxSpec {
    fn default() -> Self {
        Self { radius_factors: vec![12.5, 25.0, 50.0], probe_h: 0.002 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HypothesisSpec {
    /// Relative slack on the declared envelope constants.
    pub tol: f64,
}

impl Default for HypothesisSpec {
    fn default() -> Self {
        Self { tol: 1e-6 }
    }
}

/// A complete experiment description. Every optional section is filled with
/// its defaults on load, and the report echoes the resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub potential: PotentialSpec,
    #[serde(default)]
    pub source: SourceSpec,
    #[serde(default)]
    pub wave: WaveSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub directions: DirectionSpec,
    #[serde(default)]
    pub weight_sigma: Option<f64>,
    #[serde(default)]
    pub time: TimeSpec,
    #[serde(default)]
    pub flux: FluxSpec,
    #[serde(default)]
    pub hypothesis: HypothesisSpec,
}

fn check_range(name: &str, value: f64, lo: f64, hi: f64, open_lo: bool) -> Result<()> {
    let ok = value.is_finite() && value <= hi && if open_lo { value > lo } else { value >= lo };
    if ok {
        Ok(())
    } else {
        let l = if open_lo { "(" } else { "[" };
        Err(Error::Config(format!("{name} = {value} outside {l}{lo}, {hi}]")))
    }
}

impl ExperimentConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Checks every numeric parameter against the catalog ranges.
    pub fn validate(&self) -> Result<()> {
        for entry in catalog() {
            let values: Vec<(&str, f64)> = match (&self.potential, &self.source, entry.name) {
                (PotentialSpec::GaussianWell { g, width }, _, "gaussian_well") => vec![("g", *g), ("width", *width)],
                (PotentialSpec::YukawaRegularized { g, mu, core }, _, "yukawa_regularized") => {
                    vec![("g", *g), ("mu", *mu), ("core", *core)]
                }
                (_, SourceSpec::GaussianSource { amplitude, width }, "gaussian_source") => {
                    vec![("amplitude", *amplitude), ("width", *width)]
                }
                _ => continue,
            };
            for (name, v) in values {
                let p = entry.parameters.iter().find(|p| p.name == name).expect("catalog parameter");
                check_range(&format!("{}.{name}", entry.name), v, p.min, p.max, p.open_min)?;
            }
        }
        if self.wave.k.is_empty() {
            return Err(Error::Config("wave.k must list at least one wavenumber".into()));
        }
        for &k in &self.wave.k {
            check_range("wave.k", k, 0.0, 20.0, true)?;
        }
        let d = Vec3::from(self.wave.direction);
        if !(d.norm() > 0.0) || !d.norm().is_finite() {
            return Err(Error::Config("wave.direction must be a non-zero vector".into()));
        }
        check_range("wave.distance", self.wave.distance, 0.0, 1e6, true)?;
        for &dd in &self.wave.distances {
            check_range("wave.distances", dd, 0.0, 1e6, true)?;
        }
        if self.wave.distances.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("wave.distances must be strictly increasing".into()));
        }
        if self.kind == ExperimentKind::ConvergenceD && self.wave.distances.len() < 2 {
            return Err(Error::Config("convergence-D needs at least two distances".into()));
        }
        check_range("grid.cells", self.grid.cells as f64, 2.0, 96.0, false)?;
        check_range("grid.support_tol", self.grid.support_tol, 0.0, 0.1, true)?;
        check_range("solver.tol", self.solver.tol, 0.0, 1e-2, true)?;
        check_range("solver.max_iter", self.solver.max_iter as f64, 1.0, 1e6, false)?;
        match self.directions {
            DirectionSpec::Lebedev { degree } if ![7, 11, 17].contains(&degree) => {
                return Err(Error::Config(format!("directions.degree = {degree}; use 7, 11 or 17")));
            }
            DirectionSpec::Product { n_theta, n_phi } => {
                check_range("directions.n_theta", n_theta as f64, 1.0, 256.0, false)?;
                check_range("directions.n_phi", n_phi as f64, 1.0, 512.0, false)?;
            }
            _ => {}
        }
        if let Some(s) = self.weight_sigma {
            check_range("weight_sigma", s, 2.5, 10.0, true)?;
        }
        let t = &self.time;
        check_range("time.half_width", t.half_width, 0.0, 1e3, true)?;
        check_range("time.cells", t.cells as f64, 8.0, 256.0, false)?;
        check_range("time.dt_factor", t.dt_factor, 0.0, 10.0, true)?;
        check_range("time.periods", t.periods, 0.0, 1e4, true)?;
        check_range("time.window_periods", t.window_periods, 0.0, t.periods, true)?;
        check_range("time.switch_on_periods", t.switch_on_periods, 0.0, t.periods - t.window_periods, false)?;
        check_range("time.absorber_fraction", t.absorber_fraction, 0.0, 0.45, false)?;
        if let Some(s) = t.absorber_strength {
            check_range("time.absorber_strength", s, 0.0, 1e6, false)?;
        }
        if self.flux.radius_factors.is_empty() {
            return Err(Error::Config("flux.radius_factors must not be empty".into()));
        }
        for &r in &self.flux.radius_factors {
            check_range("flux.radius_factors", r, 1.0, 1e4, true)?;
        }
        if self.flux.radius_factors.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("flux.radius_factors must be strictly increasing".into()));
        }
        check_range("flux.probe_h", self.flux.probe_h, 0.0, 1.0, true)?;
        check_range("hypothesis.tol", self.hypothesis.tol, 0.0, 1.0, false)?;
        Ok(())
    }

    /// The configuration as canonical TOML, defaults included.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn build_potential(&self) -> Result<Potential> {
        let tol = self.grid.support_tol;
        match self.potential {
            PotentialSpec::GaussianWell { g, width } => Potential::gaussian_well_with(g, width, 0.5, tol),
            PotentialSpec::YukawaRegularized { g, mu, core } => Potential::yukawa_regularized_with(g, mu, core, tol),
        }
    }

    pub fn build_source(&self) -> Result<FormFactor> {
        match self.source {
            SourceSpec::GaussianSource { amplitude, width } => FormFactor::gaussian_source(amplitude, width),
        }
    }

    pub fn build_directions(&self) -> Result<DirectionGrid> {
        match self.directions {
            DirectionSpec::Lebedev { degree } => DirectionGrid::lebedev(degree),
            DirectionSpec::Product { n_theta, n_phi } => DirectionGrid::product(n_theta, n_phi),
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.solver.tol,
            method: match self.solver.method {
                MethodSpec::Auto => Method::Auto,
                MethodSpec::DenseLu => Method::DenseLu,
                MethodSpec::Gmres => Method::Gmres,
                MethodSpec::FixedPoint => Method::FixedPoint,
            },
            dense_limit: self.solver.dense_limit,
            max_iter: self.solver.max_iter,
            ..SolverOptions::default()
        }
    }

    pub fn sigma(&self) -> f64 {
        self.weight_sigma.unwrap_or(stationary::DEFAULT_SIGMA)
    }

    /// Wave context for the `i`-th wavenumber with the configured distance.
    pub fn wave_context(&self, k_mag: f64) -> Result<WaveContext> {
        let d = Vec3::from(self.wave.direction);
        WaveContext::new(d / d.norm() * k_mag, self.wave.distance)
    }
}

/// Parses and validates a configuration file without running it.
pub fn validate_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::from_path(path)
}

/// One numeric parameter of a catalog entry with its admissible range.
#[derive(Debug, Clone, Serialize)]
pub struct ParamRange {
    pub name: &'static str,
    pub min: f64,
    pub max: f64,
    /// Whether `min` itself is excluded.
    pub open_min: bool,
    pub meaning: &'static str,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CatalogCategory {
    Potential,
    Source,
    Experiment,
}

#[derive(Debug, Clone, Serialize)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub category: CatalogCategory,
    pub summary: &'static str,
    pub parameters: Vec<ParamRange>,
}

impl fmt::Display for CatalogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cat = match self.category {
            CatalogCategory::Potential => "potential",
            CatalogCategory::Source => "source",
            CatalogCategory::Experiment => "experiment",
        };
        writeln!(f, "{} [{cat}]: {}", self.name, self.summary)?;
        for p in &self.parameters {
            let l = if p.open_min { "(" } else { "[" };
            writeln!(f, "    {:<10} {l}{}, {}]  {}", p.name, p.min, p.max, p.meaning)?;
        }
        Ok(())
    }
}

fn param(name: &'static str, min: f64, max: f64, open_min: bool, meaning: &'static str) -> ParamRange {
    ParamRange { name, min, max, open_min, meaning }
}

fn experiment_summary(kind: ExperimentKind) -> &'static str {
    match kind {
        ExperimentKind::CrossSection => "plane-wave amplitudes, cross sections and the optical theorem per |k|",
        ExperimentKind::ConvergenceD => "spherical-source amplitudes against plane-wave amplitudes as D grows",
        ExperimentKind::LimitingAmplitude => "driven time evolution compared with the stationary spherical solution",
        ExperimentKind::FluxCheck => "scattered flux at large radii against the differential cross section",
        ExperimentKind::OracleCompare => "three-dimensional amplitudes against the partial-wave oracle",
        ExperimentKind::HypothesisCheck => "decay envelopes, source non-degeneracy and bound-state count",
    }
}

/// The full catalog, sorted by name.
pub fn catalog() -> Vec<CatalogEntry> {
    let mut entries = vec![
        CatalogEntry {
            name: "gaussian_well",
            category: CatalogCategory::Potential,
            summary: "V(x) = g exp(-|x|^2/width^2)",
            parameters: vec![
                param("g", -50.0, 50.0, false, "depth (negative: attractive)"),
                param("width", 0.0, 20.0, true, "Gaussian width"),
            ],
        },
        CatalogEntry {
            name: "yukawa_regularized",
            category: CatalogCategory::Potential,
            summary: "g e^{-mu r}/r with the origin singularity removed by two faster Yukawa terms",
            parameters: vec![
                param("g", -50.0, 50.0, false, "coupling"),
                param("mu", 0.0, 10.0, true, "screening mass"),
                param("core", 0.0, 10.0, true, "core radius of the regularisation"),
            ],
        },
        CatalogEntry {
            name: "gaussian_source",
            category: CatalogCategory::Source,
            summary: "rho(x) = amplitude (sqrt(pi) width)^{-3} exp(-|x|^2/width^2)",
            parameters: vec![
                param("amplitude", 0.0, 1e6, true, "integral of rho"),
                param("width", 0.0, 20.0, true, "Gaussian width"),
            ],
        },
    ];
    entries.extend(ExperimentKind::ALL.iter().map(|&k| CatalogEntry {
        name: k.name(),
        category: CatalogCategory::Experiment,
        summary: experiment_summary(k),
        parameters: Vec::new(),
    }));
    entries.sort_by(|a, b| a.name.cmp(b.name));
    entries
}

/// Catalog entries whose name contains `filter` (case-insensitive); an
/// empty filter lists everything.
pub fn describe(filter: &str) -> Result<Vec<CatalogEntry>> {
    let f = filter.to_lowercase();
    let hits: Vec<CatalogEntry> = catalog().into_iter().filter(|e| e.name.to_lowercase().contains(&f)).collect();
    if hits.is_empty() {
        return Err(Error::NotFound(format!("no catalog entry matches '{filter}'")));
    }
    Ok(hits)
}

/// One pass/fail verdict tied to a named module invariant.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub invariant: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub package: String,
    pub version: String,
    /// Grids used by the run: `(label, origin, spacing, dims)`.
    pub grids: Vec<GridRecord>,
    pub solver_tol: f64,
    pub weight_sigma: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GridRecord {
    pub label: String,
    pub origin: [f64; 3],
    pub spacing: f64,
    pub dims: [usize; 3],
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub kind: ExperimentKind,
    pub config: ExperimentConfig,
    pub metrics: BTreeMap<String, Value>,
    pub checks: Vec<Check>,
    pub passed: bool,
    pub artifacts: Vec<String>,
    pub provenance: Provenance,
}

impl ExperimentReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        use std::io::Write;
        writeln!(w)?;
        Ok(())
    }
}

/// A module error tagged with the stage that raised it.
#[derive(Debug)]
pub struct RunError {
    pub stage: String,
    pub source: Error,
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage '{}' failed: {}", self.stage, self.source)
    }
}

impl std::error::Error for RunError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

impl RunError {
    /// Whether the failure stems from the configuration or the environment
    /// rather than from the numerics.
    pub fn is_usage(&self) -> bool {
        matches!(self.source, Error::Config(_) | Error::NotFound(_) | Error::Io(_))
    }
}

trait Stage<T> {
    fn stage(self, name: &str) -> std::result::Result<T, RunError>;
}

impl<T, E: Into<Error>> Stage<T> for std::result::Result<T, E> {
    fn stage(self, name: &str) -> std::result::Result<T, RunError> {
        self.map_err(|e| RunError { stage: name.to_string(), source: e.into() })
    }
}

struct Recorder {
    out: PathBuf,
    metrics: BTreeMap<String, Value>,
    checks: Vec<Check>,
    artifacts: Vec<String>,
    grids: Vec<GridRecord>,
}

impl Recorder {
    fn check(&mut self, name: impl Into<String>, invariant: &str, value: f64, threshold: f64, passed: bool) {
        self.checks.push(Check { name: name.into(), invariant: invariant.into(), value, threshold, passed });
    }

    fn metric(&mut self, key: impl Into<String>, value: Value) {
        self.metrics.insert(key.into(), value);
    }

    fn grid(&mut self, label: impl Into<String>, g: &Grid3) {
        let o = g.origin();
        self.grids.push(GridRecord {
            label: label.into(),
            origin: [o.x, o.y, o.z],
            spacing: g.spacing(),
            dims: g.dims(),
        });
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        self.artifacts.push(name.to_string());
        Ok(BufWriter::new(File::create(self.out.join(name))?))
    }
}

/// Runs `cfg`, writing artifacts and `report.json` into `out`. On failure
/// the artifacts written so far are kept and a `FAILED` marker names the
/// failing stage.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> std::result::Result<ExperimentReport, RunError> {
    cfg.validate().stage("config")?;
    fs::create_dir_all(out).stage("output")?;
    let marker = out.join(FAILED_MARKER);
    if marker.exists() {
        fs::remove_file(&marker).stage("output")?;
    }
    let mut rec = Recorder {
        out: out.to_path_buf(),
        metrics: BTreeMap::new(),
        checks: Vec::new(),
        artifacts: Vec::new(),
        grids: Vec::new(),
    };
    let outcome = match cfg.kind {
        ExperimentKind::CrossSection => run_cross_section(cfg, &mut rec),
        ExperimentKind::ConvergenceD => run_convergence(cfg, &mut rec),
        ExperimentKind::LimitingAmplitude => run_limiting_amplitude(cfg, &mut rec),
        ExperimentKind::FluxCheck => run_flux_check(cfg, &mut rec),
        ExperimentKind::OracleCompare => run_oracle_compare(cfg, &mut rec),
        ExperimentKind::HypothesisCheck => run_hypothesis_check(cfg, &mut rec),
    };
    if let Err(e) = outcome {
        // best effort: the original error matters more than a marker failure
        let _ = fs::write(&marker, format!("{e}\n"));
        return Err(e);
    }
    let report = ExperimentReport {
        kind: cfg.kind,
        config: cfg.clone(),
        passed: rec.checks.iter().all(|c| c.passed),
        metrics: rec.metrics,
        checks: rec.checks,
        artifacts: rec.artifacts,
        provenance: Provenance {
            package: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            grids: rec.grids,
            solver_tol: cfg.solver.tol,
            weight_sigma: cfg.sigma(),
        },
    };
    report.write_json(&out.join(REPORT_FILE)).stage("report")?;
    Ok(report)
}

type StageResult = std::result::Result<(), RunError>;

fn interaction_grid(cfg: &ExperimentConfig, v: &Potential) -> Result<Grid3> {
    Grid3::covering(&v.support_box(), cfg.grid.cells)
}

fn residual_check(rec: &mut Recorder, label: &str, sol: &stationary::LsSolution, tol: f64) {
    rec.check(
        format!("{label}: LS residual"),
        "stationary: relative residual of the discrete LS system <= solver tol",
        sol.stats.residual,
        tol,
        sol.stats.residual <= tol,
    );
}

fn optical_check(rec: &mut Recorder, label: &str, ot: &stationary::OpticalTheorem) {
    rec.check(
        format!("{label}: optical theorem"),
        "stationary: |Im a(k,n) - (|k|/4pi) ∮sigma| <= 2% of (|k|/4pi) ∮sigma",
        ot.relative_defect,
        stationary::OPTICAL_THEOREM_TOL,
        ot.passed,
    );
}

fn run_cross_section(cfg: &ExperimentConfig, rec: &mut Recorder) -> StageResult {
    let v = cfg.build_potential().stage("potential")?;
    let dirs = cfg.build_directions().stage("directions")?;
    let grid = interaction_grid(cfg, &v).stage("grid")?;
    rec.grid("interaction", &grid);
    let opts = cfg.solver_options();
    let mut per_k = Vec::new();
    for (i, &k) in cfg.wave.k.iter().enumerate() {
        let wc = cfg.wave_context(k).stage("wave")?;
        let sol = stationary::solve_plane(&v, &wc, &grid, &opts).stage("solve_plane")?;
        let table = stationary::amplitude(&sol, &dirs).stage("amplitude")?;
        let j_a = flux::angular_scattered_density(&table, 1.0);
        let xs = flux::cross_section(&j_a, &dirs, k).stage("cross_section")?;
        table.write_csv(rec.create(&format!("amplitude_k{i}.csv")).stage("output")?).stage("output")?;
        xs.write_csv(rec.create(&format!("cross_section_k{i}.csv")).stage("output")?).stage("output")?;
        let label = format!("k={k}");
        residual_check(rec, &label, &sol, opts.tol);
        let flux_dev = xs.sigma.iter().zip(&table.sigma).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        rec.check(
            format!("{label}: flux cross section"),
            "flux: sigma from j_sc/|j_in| equals |a|^2 for the same amplitude table",
            flux_dev,
            1e-12 * table.sigma.iter().cloned().fold(0.0, f64::max),
            flux_dev <= 1e-12 * table.sigma.iter().cloned().fold(0.0, f64::max),
        );
        if !v.is_zero() {
            let ot = stationary::optical_theorem(&sol, &dirs).stage("optical_theorem")?;
            optical_check(rec, &label, &ot);
        }
        per_k.push(json!({
            "k": k,
            "total_cross_section": table.total_cross_section(),
            "max_abs_amplitude": table.max_abs(),
            "solver": sol.stats,
        }));
    }
    rec.metric("per_k", Value::Array(per_k));
    Ok(())
}

fn run_convergence(cfg: &ExperimentConfig, rec: &mut Recorder) -> StageResult {
    let v = cfg.build_potential().stage("potential")?;
    let rho = cfg.build_source().stage("source")?;
    let dirs = cfg.build_directions().stage("directions")?;
    let grid = interaction_grid(cfg, &v).stage("grid")?;
    rec.grid("interaction", &grid);
    let mut per_k = Vec::new();
    for (i, &k) in cfg.wave.k.iter().enumerate() {
        let wc = cfg.wave_context(k).stage("wave")?;
        let report = stationary::convergence_study(
            &v,
            &rho,
            &wc,
            &cfg.wave.distances,
            &grid,
            &dirs,
            cfg.sigma(),
            &cfg.solver_options(),
        )
        .stage("convergence_study")?;
        report.write_json(rec.create(&format!("convergence_k{i}.json")).stage("output")?).stage("output")?;
        rec.check(
            format!("k={k}: A_D -> A"),
            "stationary: error sequences decrease beyond the first entry with log-log slope <= -0.8",
            report.slopes.field,
            DISTANCE_SLOPE,
            report.passed,
        );
        per_k.push(serde_json::to_value(&report).stage("report")?);
    }
    rec.metric("per_k", Value::Array(per_k));
    Ok(())
}

fn run_limiting_amplitude(cfg: &ExperimentConfig, rec: &mut Recorder) -> StageResult {
    let v = cfg.build_potential().stage("potential")?;
    let rho = cfg.build_source().stage("source")?;
    let t = &cfg.time;
    let bound = oracle::bound_state_count(&v).stage("bound_state_count")?;
    rec.metric("bound_states", json!(bound));
    rec.check(
        "no bound states",
        "timedomain: the limiting amplitude principle needs a potential without bound states",
        bound as f64,
        0.0,
        bound == 0,
    );
    let grid = Grid3::cube(Vec3::zeros(), t.half_width, t.cells).stage("grid")?;
    let h = grid.spacing();
    let vgrid = grid.aligned_cover(&v.support_box()).stage("grid")?;
    rec.grid("evolution", &grid);
    rec.grid("interaction", &vgrid);
    let mut per_k = Vec::new();
    for (i, &k) in cfg.wave.k.iter().enumerate() {
        let d = Vec3::from(cfg.wave.direction);
        let wc = WaveContext::new(d / d.norm() * k, timedomain::default_distance(&grid)).stage("wave")?;
        let stat =
            stationary::solve_spherical(&v, &rho, &wc, &vgrid, &cfg.solver_options()).stage("solve_spherical")?;
        let drive = if t.lattice_frequency { (1.0 - (k * h).cos()) / (h * h) } else { wc.energy() };
        let period = 2.0 * std::f64::consts::PI / drive;
        let mut opts = EvolveOptions::new(t.periods * period);
        opts.dt = Some(t.dt_factor * h * h);
        opts.observe = Some(vgrid.clone());
        opts.absorber = AbsorberSpec { fraction: t.absorber_fraction, strength: t.absorber_strength };
        opts.drive_energy = Some(drive);
        opts.switch_on = t.switch_on_periods * period;
        let traj = timedomain::evolve(&v, &rho, &wc, &grid, &opts).stage("evolve")?;
        let t_end = traj.times.last().copied().unwrap_or(0.0);
        let est = timedomain::extract_limit_amplitude(&traj, (t_end - t.window_periods * period, t_end), cfg.sigma())
            .stage("extract_limit_amplitude")?;
        est.write_history_csv(rec.create(&format!("residual_history_k{i}.csv")).stage("output")?).stage("output")?;
        let rel = est.b_hat.sub(&stat.field).stage("compare")?.weighted_norm(cfg.sigma())
            / stat.field.weighted_norm(cfg.sigma());
        let label = format!("k={k}");
        rec.check(
            format!("{label}: residual tail"),
            "timedomain: residual history nonincreasing on the final periods, tail <= 5% of ||B||_w",
            est.relative_tail,
            LIMIT_AMPLITUDE_TOL,
            est.passed,
        );
        rec.check(
            format!("{label}: limit amplitude vs stationary"),
            "timedomain: ||B_hat - B_D||_w / ||B_D||_w <= 0.05 on matched grids",
            rel,
            LIMIT_AMPLITUDE_TOL,
            rel <= LIMIT_AMPLITUDE_TOL,
        );
        per_k.push(json!({
            "k": k,
            "distance": wc.distance(),
            "drive_energy": drive,
            "dt": traj.dt,
            "steps": traj.steps,
            "max_jacobi_sweeps": traj.max_sweeps,
            "absorber": traj.absorber,
            "window": est.window,
            "relative_tail": est.relative_tail,
            "tail_decreasing": est.decreasing,
            "relative_error_vs_stationary": rel,
        }));
    }
    rec.metric("per_k", Value::Array(per_k));
    Ok(())
}

fn run_flux_check(cfg: &ExperimentConfig, rec: &mut Recorder) -> StageResult {
    let v = cfg.build_potential().stage("potential")?;
    let rho = cfg.build_source().stage("source")?;
    let dirs = cfg.build_directions().stage("directions")?;
    let grid = interaction_grid(cfg, &v).stage("grid")?;
    rec.grid("interaction", &grid);
    let radii: Vec<f64> = cfg.flux.radius_factors.iter().map(|f| f * v.support_radius()).collect();
    let mut per_k = Vec::new();
    for (i, &k) in cfg.wave.k.iter().enumerate() {
        let wc = cfg.wave_context(k).stage("wave")?;
        let sol = stationary::solve_spherical(&v, &rho, &wc, &grid, &cfg.solver_options()).stage("solve_spherical")?;
        let label = format!("k={k}");
        residual_check(rec, &label, &sol, cfg.solver.tol);
        let rep = flux::far_field_flux(&sol, &dirs, &radii, cfg.flux.probe_h).stage("far_field_flux")?;
        let mut w = csv::Writer::from_writer(rec.create(&format!("far_flux_k{i}.csv")).stage("output")?);
        let mut csv_rows = || -> Result<()> {
            w.write_record(["theta_x", "theta_y", "theta_z", "radius", "measured", "sigma"])?;
            for (r, row) in rep.radii.iter().zip(&rep.measured) {
                for ((t, m), s) in dirs.points().iter().zip(row).zip(&rep.sigma) {
                    w.write_record([t.x, t.y, t.z, *r, *m, *s].iter().map(|v| format!("{v:.17e}")))?;
                }
            }
            w.flush()?;
            Ok(())
        };
        csv_rows().stage("output")?;
        let last = rep.max_rel_dev.last().copied().unwrap_or(f64::NAN);
        rec.check(
            format!("{label}: far-field flux"),
            "flux: R^2 j_sc·theta/(|b|^2|k|) matches sigma within 5% at the largest radius",
            last,
            FAR_FIELD_TOL,
            last <= FAR_FIELD_TOL,
        );
        if rep.radii.len() >= 2 {
            rec.check(
                format!("{label}: far-field decay"),
                "flux: deviation decays with log-log slope <= -1 in R",
                rep.slope,
                FAR_FIELD_SLOPE,
                rep.slope <= FAR_FIELD_SLOPE,
            );
        }
        per_k.push(serde_json::to_value(&rep).stage("report")?);
    }
    rec.metric("per_k", Value::Array(per_k));
    Ok(())
}

fn run_oracle_compare(cfg: &ExperimentConfig, rec: &mut Recorder) -> StageResult {
    let v = cfg.build_potential().stage("potential")?;
    if !v.is_radial() && !v.is_zero() {
        return Err(RunError {
            stage: "oracle".into(),
            source: Error::Config("oracle-compare needs a radial potential".into()),
        });
    }
    let dirs = cfg.build_directions().stage("directions")?;
    let grid = interaction_grid(cfg, &v).stage("grid")?;
    rec.grid("interaction", &grid);
    let opts = cfg.solver_options();
    let mut per_k = Vec::new();
    for (i, &k) in cfg.wave.k.iter().enumerate() {
        let wc = cfg.wave_context(k).stage("wave")?;
        let sol = stationary::solve_plane(&v, &wc, &grid, &opts).stage("solve_plane")?;
        let table = stationary::amplitude(&sol, &dirs).stage("amplitude")?;
        let ps = oracle::phase_shifts(&v, k, &PhaseShiftOptions::default()).stage("phase_shifts")?;
        let reference = oracle::partial_wave_amplitude(&ps, &wc, &dirs, 1e-6).stage("partial_wave_amplitude")?;
        table.write_csv(rec.create(&format!("amplitude_k{i}.csv")).stage("output")?).stage("output")?;
        reference.write_csv(rec.create(&format!("oracle_amplitude_k{i}.csv")).stage("output")?).stage("output")?;
        ps.write_csv(rec.create(&format!("phase_shifts_k{i}.csv")).stage("output")?).stage("output")?;
        let rms = oracle::relative_rms(&table, &reference).stage("compare")?;
        let label = format!("k={k}");
        residual_check(rec, &label, &sol, opts.tol);
        rec.check(
            format!("{label}: oracle agreement"),
            "oracle: RMS |a_oracle - a_nystrom| <= 1% of max |a_oracle|",
            rms,
            ORACLE_AGREEMENT_TOL,
            rms <= ORACLE_AGREEMENT_TOL,
        );
        let ot = stationary::optical_theorem(&sol, &dirs).stage("optical_theorem")?;
        optical_check(rec, &label, &ot);
        per_k.push(json!({
            "k": k,
            "relative_rms": rms,
            "l_max": ps.l_max(),
            "optical_theorem": ot,
            "solver": sol.stats,
        }));
    }
    rec.metric("per_k", Value::Array(per_k));
    Ok(())
}

fn run_hypothesis_check(cfg: &ExperimentConfig, rec: &mut Recorder) -> StageResult {
    let v = cfg.build_potential().stage("potential")?;
    let rho = cfg.build_source().stage("source")?;
    let dirs = cfg.build_directions().stage("directions")?;
    let tol = cfg.hypothesis.tol;
    let vr = validate_potential(&v, v.support_radius().max(1.0), tol).stage("validate_potential")?;
    rec.check(
        "potential decay envelope",
        "model: <x>^{5+eps}|d^alpha V| <= C (1 + tol) for |alpha| <= 2",
        vr.max_weighted,
        vr.bound * (1.0 + tol),
        vr.passed,
    );
    let fr = validate_form_factor(&rho, rho.support_radius(), tol).stage("validate_form_factor")?;
    rec.check(
        "source decay envelope",
        "model: <x>^{4+eps'}|rho| <= C (1 + tol)",
        fr.max_weighted,
        fr.bound * (1.0 + tol),
        fr.passed,
    );
    let bound = oracle::bound_state_count(&v).ok();
    rec.metric("bound_states", json!(bound));
    rec.metric("potential_validation", serde_json::to_value(&vr).stage("report")?);
    rec.metric("source_validation", serde_json::to_value(&fr).stage("report")?);
    let mut per_k = Vec::new();
    for &k in &cfg.wave.k {
        let w = wiener_check(&rho, k, &dirs, DEGENERATE_SOURCE_TOL).stage("wiener_check")?;
        rec.check(
            format!("k={k}: source transform non-vanishing"),
            "model: min |rho_hat(|k| theta)| over the direction grid exceeds the degeneracy tolerance",
            w.min_abs,
            DEGENERATE_SOURCE_TOL,
            w.passed,
        );
        per_k.push(json!({ "k": k, "min_abs": w.min_abs, "argmin": w.argmin }));
    }
    rec.metric("source_transform", Value::Array(per_k));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
kind = "cross-section"

[potential]
name = "gaussian_well"
g = 0.0
width = 1.0

[grid]
cells = 6
"#;

    #[test]
    fn defaults_are_filled_and_echoed() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.wave, WaveSpec::default());
        let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn rejects_unknown_names_and_ranges() {
        let bad_name = MINIMAL.replace("gaussian_well", "square_well");
        assert!(matches!(ExperimentConfig::from_toml(&bad_name), Err(Error::Config(_))));
        let bad_width = MINIMAL.replace("width = 1.0", "width = -1.0");
        assert!(matches!(ExperimentConfig::from_toml(&bad_width), Err(Error::Config(_))));
        let bad_field = format!("{MINIMAL}\n[solver]\ntolerance = 1e-8\n");
        assert!(matches!(ExperimentConfig::from_toml(&bad_field), Err(Error::Config(_))));
        let bad_kind = MINIMAL.replace("cross-section", "bogus");
        assert!(matches!(ExperimentConfig::from_toml(&bad_kind), Err(Error::Config(_))));
    }

    #[test]
    fn describe_filters() {
        let all = describe("").unwrap();
        assert_eq!(all.len(), 9);
        assert!(all.windows(2).all(|w| w[0].name < w[1].name));
        let g: Vec<_> = describe("gaussian").unwrap().iter().map(|e| e.name).collect();
        assert_eq!(g, vec!["gaussian_source", "gaussian_well"]);
        assert!(matches!(describe("nonexistent"), Err(Error::NotFound(_))));
    }

    #[test]
    fn zero_potential_cross_section_passes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let report = run(&cfg, dir.path()).unwrap();
        assert!(report.passed);
        let text = fs::read_to_string(dir.path().join("cross_section_k0.csv")).unwrap();
        assert!(text.lines().skip(1).all(|l| l.ends_with("0.00000000000000000e0")));
        assert!(dir.path().join(REPORT_FILE).exists());
    }

    #[test]
    fn failure_leaves_marker() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        cfg.kind = ExperimentKind::LimitingAmplitude;
        cfg.potential = PotentialSpec::GaussianWell { g: -1.0, width: 1.0 };
        cfg.time.half_width = 2.0;
        cfg.time.cells = 8;
        let err = run(&cfg, dir.path()).unwrap_err();
        assert_eq!(err.stage, "grid");
        assert!(dir.path().join(FAILED_MARKER).exists());
    }
}
