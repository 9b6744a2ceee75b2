//! Compares the three-dimensional amplitude of a radial potential with the
//! partial-wave series built from Numerov phase shifts.

use scatlab::oracle::{bound_state_count, partial_wave_amplitude, phase_shifts, relative_rms, PhaseShiftOptions};
use scatlab::stationary::{amplitude, solve_plane, SolverOptions};
use scatlab::{DirectionGrid, Grid3, Potential, Vec3, WaveContext};

fn main() -> scatlab::Result<()> {
    let v = Potential::gaussian_well(-1.0, 1.0)?;
    println!("bound states: {}", bound_state_count(&v)?);
    let grid = Grid3::covering(&v.support_box(), 32)?;
    let dirs = DirectionGrid::lebedev(17)?;
    for k in [0.5, 1.0, 2.0] {
        let wc = WaveContext::plane(Vec3::new(0.0, 0.0, k))?;
        let sol = solve_plane(&v, &wc, &grid, &SolverOptions::default())?;
        let nystrom = amplitude(&sol, &dirs)?;
        let ps = phase_shifts(&v, k, &PhaseShiftOptions::default())?;
        let series = partial_wave_amplitude(&ps, &wc, &dirs, 1e-8)?;
        let shifts: Vec<String> = ps.deltas.iter().take(4).map(|d| format!("{d:+.5}")).collect();
        println!(
            "k = {k}: delta_0..3 = [{}], l_max = {}, rms difference {:.3e} of max|a|",
            shifts.join(", "),
            ps.l_max(),
            relative_rms(&nystrom, &series)?
        );
    }
    Ok(())
}
