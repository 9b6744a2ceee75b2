//! Numeric checks of the decay and non-degeneracy assumptions on the
//! potential and the source.

use scatlab::model::{validate_form_factor, validate_potential, wiener_check};
use scatlab::{DirectionGrid, FormFactor, Potential};

fn main() -> scatlab::Result<()> {
    let dirs = DirectionGrid::lebedev(17)?;
    for v in [Potential::gaussian_well(-1.0, 1.0)?, Potential::yukawa_regularized(0.5, 1.0, 1.0)?] {
        let r = validate_potential(&v, v.support_radius(), 1e-6)?;
        println!(
            "potential (support radius {:.2}): weighted max {:.3e} vs bound {:.3e}, passed {}",
            v.support_radius(),
            r.max_weighted,
            r.bound,
            r.passed
        );
    }
    let rho = FormFactor::gaussian_source(1.0, 1.0)?;
    let r = validate_form_factor(&rho, rho.support_radius(), 1e-6)?;
    println!("source envelope: weighted max {:.3e} vs bound {:.3e}, passed {}", r.max_weighted, r.bound, r.passed);
    for k in [0.5, 2.0, 5.0] {
        let w = wiener_check(&rho, k, &dirs, 1e-6)?;
        println!("|rho_hat(k theta)| >= {:.3e} at k = {k}, passed {}", w.min_abs, w.passed);
    }
    Ok(())
}
