//! Spherical incidence from a Gaussian source at growing distance D: the
//! normalised field and amplitude approach the plane-wave ones like 1/D.

use scatlab::stationary::{convergence_study, SolverOptions};
use scatlab::{DirectionGrid, FormFactor, Grid3, Potential, Vec3, WaveContext};

fn main() -> scatlab::Result<()> {
    let v = Potential::gaussian_well(-1.0, 1.0)?;
    let rho = FormFactor::gaussian_source(1.0, 1.0)?;
    let wc = WaveContext::new(Vec3::new(0.0, 0.0, 1.0), 50.0)?;
    let grid = Grid3::covering(&v.support_box(), 20)?;
    let distances = [50.0, 100.0, 200.0, 400.0, 800.0];
    let report = convergence_study(
        &v,
        &rho,
        &wc,
        &distances,
        &grid,
        &DirectionGrid::lebedev(11)?,
        2.6,
        &SolverOptions::default(),
    )?;
    println!("{:>6} {:>12} {:>12} {:>12}", "D", "incident", "field", "amplitude");
    for (i, d) in distances.iter().enumerate() {
        println!(
            "{d:>6} {:>12.4e} {:>12.4e} {:>12.4e}",
            report.err_incident[i], report.err_field[i], report.err_amp[i]
        );
    }
    let s = &report.slopes;
    println!("log-log slopes: incident {:.3}, field {:.3}, amplitude {:.3}", s.incident, s.field, s.amplitude);
    Ok(())
}
