//! Plane-wave scattering by an attractive Gaussian well: amplitude table,
//! differential and total cross section, T-matrix and the optical theorem.

use scatlab::stationary::{amplitude, amplitude_from_t, optical_theorem, solve_plane, t_matrix, SolverOptions};
use scatlab::{DirectionGrid, Grid3, Potential, Vec3, WaveContext};

fn main() -> scatlab::Result<()> {
    let v = Potential::gaussian_well(-1.0, 1.0)?;
    let wc = WaveContext::plane(Vec3::new(0.0, 0.0, 1.0))?;
    let grid = Grid3::covering(&v.support_box(), 24)?;
    let sol = solve_plane(&v, &wc, &grid, &SolverOptions::default())?;
    println!("{} unknowns, residual {:.2e}", grid.len(), sol.stats.residual);

    let dirs = DirectionGrid::lebedev(17)?;
    let table = amplitude(&sol, &dirs)?;
    for (t, (a, s)) in dirs.points().iter().zip(table.values.iter().zip(&table.sigma)).step_by(20) {
        println!("theta = ({:+.2}, {:+.2}, {:+.2})  a = {a:.4}  dsigma/dOmega = {s:.4e}", t.x, t.y, t.z);
    }
    println!("total cross section {:.5}", table.total_cross_section());

    let forward = t_matrix(&sol, &Vec3::new(0.0, 0.0, 1.0))?;
    println!("forward T = {:.5}, a = -4 pi^2 T = {:.5}", forward.value, amplitude_from_t(&forward));

    let ot = optical_theorem(&sol, &dirs)?;
    println!(
        "optical theorem: Im a(forward) = {:.6}, k sigma / 4 pi = {:.6}, defect {:.2e}",
        ot.forward_im, ot.predicted, ot.relative_defect
    );
    Ok(())
}
