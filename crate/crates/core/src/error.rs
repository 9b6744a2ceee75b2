use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid potential: {0}")]
    InvalidPotential(String),

    #[error("invalid form factor: {0}")]
    InvalidFormFactor(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("kernel evaluated at coincident points; use the corrected diagonal")]
    SingularPoint,

    #[error("target at {0:?} lies inside the shifted source support")]
    Overlap([f64; 3]),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("quadrature not resolved: refinement changed the result by {change:.3e} (tolerance {tol:.3e})")]
    Resolution { change: f64, tol: f64 },

    #[error("degenerate source: |b(n)| = {0:.3e} is below tolerance")]
    DegenerateSource(f64),

    #[error("degenerate incident flux")]
    DegenerateFlux,

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    IterationLimit { iterations: usize, residual: f64 },

    #[error("time integration blew up at t = {t:.4}: norm grew by {growth:.2}x between snapshots")]
    BlowUp { t: f64, growth: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("matching failure for l = {l}: increase r_max")]
    Matching { l: usize },

    #[error("partial-wave sum not converged: |delta_{l_max}| = {last:.3e}")]
    Truncation { l_max: usize, last: f64 },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
