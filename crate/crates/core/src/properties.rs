//! Property tests for the invariants each module promises.

use crate::experiment::{describe, ExperimentConfig};
use crate::flux::flux_field;
use crate::model::{
    validate_potential, wiener_check, DirectionGrid, Envelope, FormFactor, Grid3, Potential, ScalarField, SupportBox,
    Vec3, WaveContext,
};
use crate::resolvent::{far_field_coefficient, kernel};
use crate::stationary::{amplitude, normalization_bd, solve_plane, t_matrix, Method, SolverOptions};
use crate::timedomain::{evolve, AbsorberSpec, EvolveOptions};
use num_complex::Complex64;
use proptest::prelude::*;
use std::f64::consts::PI;

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn direction() -> impl Strategy<Value = Vec3> {
    vec3(1.0).prop_filter("non-zero", |v| v.norm() > 1e-3).prop_map(|v| v / v.norm())
}

fn small_field(grid: &Grid3, seed: f64) -> ScalarField {
    ScalarField::from_fn(grid.clone(), |x| {
        Complex64::new((seed * x.x).sin() + x.y, (x.z - seed).cos()) * (-x.norm_squared() / 4.0).exp()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn kernel_is_reciprocal(e in 0.01f64..8.0, x in vec3(5.0), y in vec3(5.0)) {
        prop_assume!((x - y).norm() > 1e-6);
        prop_assert_eq!(kernel(e, &x, &y).unwrap(), kernel(e, &y, &x).unwrap());
        let expected = 1.0 / (2.0 * PI * (x - y).norm());
        prop_assert!((kernel(e, &x, &y).unwrap().norm() - expected).abs() <= 1e-14 * expected);
    }

    #[test]
    fn far_field_is_linear_and_shift_covariant(
        e in 0.05f64..4.0,
        c in -2.0f64..2.0,
        seed in 0.1f64..3.0,
        shift in prop::array::uniform3(-3i32..3),
    ) {
        let grid = Grid3::cube(Vec3::zeros(), 2.0, 6).unwrap();
        let dirs = DirectionGrid::lebedev(7).unwrap();
        let f = small_field(&grid, seed);
        let g = small_field(&grid, seed + 1.0);
        let sum = ScalarField::new(grid.clone(), f.values().iter().zip(g.values()).map(|(a, b)| a + c * b).collect()).unwrap();
        let (pf, pg, ps) = (
            far_field_coefficient(e, &f, &dirs).unwrap(),
            far_field_coefficient(e, &g, &dirs).unwrap(),
            far_field_coefficient(e, &sum, &dirs).unwrap(),
        );
        for i in 0..dirs.len() {
            let lin = pf.values[i] + c * pg.values[i];
            prop_assert!((ps.values[i] - lin).norm() <= 1e-12 * (1.0 + lin.norm()));
        }
        // shift by whole cells: same samples on a translated grid
        let h = grid.spacing();
        let s = Vec3::new(shift[0] as f64, shift[1] as f64, shift[2] as f64) * h;
        let moved = Grid3::new(grid.origin() + s, h, grid.dims()).unwrap();
        let fm = ScalarField::new(moved, f.values().to_vec()).unwrap();
        let pm = far_field_coefficient(e, &fm, &dirs).unwrap();
        let k = (2.0 * e).sqrt();
        for (i, t) in dirs.points().iter().enumerate() {
            let expected = pf.values[i] * Complex64::from_polar(1.0, -k * t.dot(&s));
            prop_assert!((pm.values[i] - expected).norm() <= 1e-12 * (1.0 + expected.norm()));
        }
    }

    #[test]
    fn potential_validation_is_monotone_in_scale(g in -2.0f64..2.0, w in 0.5f64..2.0, lambda in -1.0f64..1.0) {
        prop_assume!(g.abs() > 1e-3);
        let v = Potential::gaussian_well(g, w).unwrap();
        let r = v.support_radius();
        if validate_potential(&v, r, 1e-6).unwrap().passed {
            prop_assert!(validate_potential(&v.scaled(lambda), r, 1e-6).unwrap().passed);
        }
    }

    #[test]
    fn source_transform_is_rotation_invariant_for_radial_sources(k in 0.2f64..3.0, w in 0.3f64..1.5) {
        let rho = FormFactor::gaussian_source(1.0, w).unwrap();
        let tol = 1e-6;
        let rep = wiener_check(&rho, k, &DirectionGrid::lebedev(11).unwrap(), tol).unwrap();
        let mags: Vec<f64> = rep.values.iter().map(|(re, im)| (re * re + im * im).sqrt()).collect();
        let max = mags.iter().cloned().fold(0.0, f64::max);
        let min = mags.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert!(max - min <= tol, "{min} {max}");
    }

    #[test]
    fn normalization_modulus_is_independent_of_distance(k in 0.2f64..2.5, d in 5.0f64..500.0, theta in direction()) {
        let rho = FormFactor::gaussian_source(1.0, 0.8).unwrap();
        let wc = WaveContext::new(theta * k, d).unwrap();
        let b1 = normalization_bd(&rho, &wc).unwrap();
        let b2 = normalization_bd(&rho, &wc.with_distance(3.0 * d).unwrap()).unwrap();
        prop_assert!((b1.norm() - b2.norm()).abs() <= 1e-14 * b1.norm());
        let b3 = normalization_bd(&rho, &wc.with_distance(d + 2.0 * PI / k).unwrap()).unwrap();
        prop_assert!((b1 - b3).norm() <= 1e-9 * b1.norm());
    }

    #[test]
    fn flux_is_gauge_invariant_and_quadratic(alpha in 0.0f64..(2.0 * PI), lambda in -3.0f64..3.0, seed in 0.1f64..3.0) {
        let grid = Grid3::cube(Vec3::zeros(), 2.0, 8).unwrap();
        let psi = small_field(&grid, seed);
        let j = flux_field(&psi).unwrap();
        let jp = flux_field(&psi.scaled(Complex64::from_polar(1.0, alpha))).unwrap();
        let jl = flux_field(&psi.scaled(Complex64::new(lambda, 0.0))).unwrap();
        for ((a, b), c) in j.values().iter().zip(jp.values()).zip(jl.values()) {
            for ax in 0..3 {
                let scale = 1e-14 * (1.0 + a[ax].abs());
                prop_assert!((a[ax] - b[ax]).abs() <= scale);
                prop_assert!((lambda * lambda * a[ax] - c[ax]).abs() <= lambda * lambda * scale + 1e-300);
            }
        }
    }

    #[test]
    fn catalog_filters_are_sorted_substrings(filter in "[a-z_-]{0,4}") {
        if let Ok(entries) = describe(&filter) {
            prop_assert!(entries.windows(2).all(|w| w[0].name < w[1].name));
            prop_assert!(entries.iter().all(|e| e.name.to_lowercase().contains(&filter)));
        }
    }

    #[test]
    fn config_round_trips_through_toml(k in prop::collection::vec(0.1f64..5.0, 1..4), cells in 4usize..40, g in -3.0f64..3.0) {
        let ks: Vec<String> = k.iter().map(|v| format!("{v:?}")).collect();
        let text = format!(
            "kind = \"cross-section\"\n[potential]\nname = \"gaussian_well\"\ng = {g:?}\nwidth = 1.0\n[wave]\nk = [{}]\n[grid]\ncells = {cells}\n",
            ks.join(", ")
        );
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        prop_assert_eq!(&cfg.wave.k, &k);
        let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        prop_assert_eq!(cfg, again);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn amplitude_table_identities(g in -1.5f64..1.5, k in 0.3f64..2.0, theta in direction()) {
        prop_assume!(g.abs() > 1e-2);
        let v = Potential::gaussian_well(g, 1.0).unwrap();
        let grid = Grid3::covering(&v.support_box(), 10).unwrap();
        let wc = WaveContext::plane(theta * k).unwrap();
        let sol = solve_plane(&v, &wc, &grid, &SolverOptions::default()).unwrap();
        prop_assert!(sol.stats.residual <= 1e-8);
        let dirs = DirectionGrid::lebedev(7).unwrap();
        let table = amplitude(&sol, &dirs).unwrap();
        for ((t, a), s) in dirs.points().iter().zip(&table.values).zip(&table.sigma) {
            prop_assert_eq!(*s, a.norm_sqr());
            let tm = t_matrix(&sol, t).unwrap();
            prop_assert!((a + 4.0 * PI * PI * tm.value).norm() <= 1e-13 * a.norm());
            let (ko, ki) = (Vec3::from(tm.k_out), Vec3::from(tm.k_in));
            prop_assert!((ko.norm() - ki.norm()).abs() <= 1e-12 * ki.norm());
        }
    }

    #[test]
    fn born_series_agrees_with_direct_solve(g in -0.3f64..0.3, k in 0.3f64..2.0) {
        prop_assume!(g.abs() > 1e-3);
        let v = Potential::gaussian_well(g, 1.0).unwrap();
        let grid = Grid3::covering(&v.support_box(), 10).unwrap();
        let wc = WaveContext::plane(Vec3::new(0.0, 0.0, k)).unwrap();
        let tol = 1e-10;
        let direct = solve_plane(&v, &wc, &grid, &SolverOptions { method: Method::DenseLu, ..SolverOptions::with_tol(tol) }).unwrap();
        let born = solve_plane(&v, &wc, &grid, &SolverOptions { method: Method::FixedPoint, ..SolverOptions::with_tol(tol) }).unwrap();
        let d = born.field.sub(&direct.field).unwrap().max_abs();
        prop_assert!(d <= 10.0 * tol * direct.field.max_abs(), "{d}");
    }

    #[test]
    fn amplitude_reciprocity_for_real_potentials(k in 0.3f64..1.5, n in direction(), theta in direction()) {
        // an off-centre, non-radial real potential
        let c = Vec3::new(0.4, -0.2, 0.3);
        let v = Potential::from_fn(
            "ellipsoid",
            move |x| {
                let y = x - c;
                -0.8 * (-(y.x * y.x + 2.0 * y.y * y.y + 0.5 * y.z * y.z)).exp()
            },
            SupportBox::cube(c, 6.0),
            Envelope { c: 1e3, eps: 0.5 },
        );
        let grid = Grid3::covering(&v.support_box(), 12).unwrap();
        let dirs = |t: Vec3| DirectionGrid::new("one", vec![t], vec![4.0 * PI]).unwrap();
        let opts = SolverOptions::with_tol(1e-10);
        let fwd = solve_plane(&v, &WaveContext::plane(n * k).unwrap(), &grid, &opts).unwrap();
        let rev = solve_plane(&v, &WaveContext::plane(-theta * k).unwrap(), &grid, &opts).unwrap();
        let a = amplitude(&fwd, &dirs(theta)).unwrap().values[0];
        let b = amplitude(&rev, &dirs(-n)).unwrap().values[0];
        prop_assert!((a - b).norm() <= 1e-8 * a.norm().max(1e-12), "{a} {b}");
    }

    #[test]
    fn evolution_is_linear_in_the_source(alpha in 0.0f64..(2.0 * PI), scale in 0.1f64..3.0) {
        let g = Grid3::cube(Vec3::zeros(), 4.0, 10).unwrap();
        let wc = WaveContext::new(Vec3::new(0.0, 0.0, 1.0), 2.0).unwrap();
        let rho = FormFactor::gaussian_source(1.0, 0.6).unwrap();
        let rho_s = FormFactor::gaussian_source(scale, 0.6).unwrap().with_phase(alpha);
        let v = Potential::gaussian_well(-1.0, 1.0).unwrap();
        let mut o = EvolveOptions::new(0.5);
        o.absorber = AbsorberSpec { fraction: 0.15, strength: Some(0.5) };
        let a = evolve(&v, &rho, &wc, &g, &o).unwrap();
        let b = evolve(&v, &rho_s, &wc, &g, &o).unwrap();
        let expected = a.final_state.psi.scaled(Complex64::from_polar(scale, alpha));
        let d = expected.sub(&b.final_state.psi).unwrap().max_abs();
        prop_assert!(d <= 1e-11 * expected.max_abs(), "{d}");
    }
}

#[test]
fn direction_grids_integrate_to_the_sphere_area() {
    for g in [7, 11, 17]
        .map(|d| DirectionGrid::lebedev(d).unwrap())
        .into_iter()
        .chain([DirectionGrid::product(6, 12).unwrap()])
    {
        assert!((g.weights().iter().sum::<f64>() - 4.0 * PI).abs() < 1e-10, "{}", g.name());
    }
}
