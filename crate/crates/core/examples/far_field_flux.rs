//! Scattered probability current on spheres of growing radius compared with
//! the differential cross section from the amplitude table.

use scatlab::flux::far_field_flux;
use scatlab::stationary::{solve_spherical, SolverOptions};
use scatlab::{DirectionGrid, FormFactor, Grid3, Potential, Vec3, WaveContext};

fn main() -> scatlab::Result<()> {
    let v = Potential::gaussian_well(-1.0, 1.0)?;
    let rho = FormFactor::gaussian_source(1.0, 1.0)?;
    let wc = WaveContext::new(Vec3::new(0.0, 0.0, 1.0), 200.0)?;
    let grid = Grid3::covering(&v.support_box(), 24)?;
    let sol = solve_spherical(&v, &rho, &wc, &grid, &SolverOptions::default())?;
    let r0 = v.support_radius();
    let radii: Vec<f64> = [12.5, 25.0, 50.0, 100.0].iter().map(|f| f * r0).collect();
    let report = far_field_flux(&sol, &DirectionGrid::lebedev(7)?, &radii, 0.002)?;
    for (r, dev) in report.radii.iter().zip(&report.max_rel_dev) {
        println!("R = {r:>8.1}: max relative deviation from dsigma/dOmega {dev:.3e}");
    }
    println!("fitted decay exponent {:.3}", report.slope);
    Ok(())
}
