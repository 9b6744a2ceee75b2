use super::grid::Vec3;
use crate::error::{Error, Result};
use std::f64::consts::PI;

/// Quadrature on the unit sphere: unit directions with weights summing
/// to `4 pi`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionGrid {
    name: String,
    points: Vec<Vec3>,
    weights: Vec<f64>,
}

// Lebedev generators, weights normalised to 1 over the sphere:
// code 1 (6 axis points), code 2 (12 edge midpoints), code 3 (8 cube
// corners), code 4 (a, a, b) with b = sqrt(1 - 2a^2), code 5 (a, b, 0) with
// b = sqrt(1 - a^2).
const LEBEDEV_26: &[(u8, f64, f64)] =
    &[(1, 0.0, 0.047_619_047_619_047_62), (2, 0.0, 0.038_095_238_095_238_1), (3, 0.0, 0.032_142_857_142_857_14)];

const LEBEDEV_50: &[(u8, f64, f64)] = &[
    (1, 0.0, 0.012_698_412_698_412_7),
    (2, 0.0, 0.022_574_955_908_289_24),
    (3, 0.0, 0.021_093_75),
    (4, 0.301_511_344_577_763_6, 0.020_173_335_537_918_87),
];

const LEBEDEV_110: &[(u8, f64, f64)] = &[
    (1, 0.0, 0.003_828_270_494_937_162),
    (3, 0.0, 0.009_793_737_512_487_512),
    (4, 0.185_115_635_344_736_2, 0.008_211_737_283_191_111),
    (4, 0.690_421_048_382_292_2, 0.009_942_814_891_178_103),
    (4, 0.395_689_473_055_941_9, 0.009_595_471_336_070_963),
    (5, 0.478_369_028_812_150_2, 0.009_694_996_361_663_028),
];

impl DirectionGrid {
    pub fn new(name: &str, points: Vec<Vec3>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() || points.is_empty() {
            return Err(Error::InvalidArgument("direction grid needs matching non-empty points and weights".into()));
        }
        if points.iter().any(|p| (p.norm() - 1.0).abs() > 1e-12) {
            return Err(Error::InvalidArgument("direction grid points must be unit vectors".into()));
        }
        Ok(Self { name: name.into(), points, weights })
    }

    /// Lebedev rule exact for spherical polynomials up to `degree`
    /// (supported: 7 → 26 points, 11 → 50 points, 17 → 110 points).
    pub fn lebedev(degree: usize) -> Result<Self> {
        let table = match degree {
            7 => LEBEDEV_26,
            11 => LEBEDEV_50,
            17 => LEBEDEV_110,
            _ => return Err(Error::InvalidArgument(format!("no Lebedev rule of degree {degree}; use 7, 11 or 17"))),
        };
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for &(code, a, w) in table {
            let gen = generator(code, a);
            weights.extend(std::iter::repeat_n(4.0 * PI * w, gen.len()));
            points.extend(gen);
        }
        Self::new(&format!("lebedev{}", points.len()), points, weights)
    }

    /// Product rule: Gauss-Legendre in `cos(theta)` times uniform `phi`.
    pub fn product(n_theta: usize, n_phi: usize) -> Result<Self> {
        if n_theta == 0 || n_phi == 0 {
            return Err(Error::InvalidArgument("product grid needs at least one node per axis".into()));
        }
        let (nodes, wts) = gauss_legendre(n_theta);
        let mut points = Vec::with_capacity(n_theta * n_phi);
        let mut weights = Vec::with_capacity(n_theta * n_phi);
        for (&c, &w) in nodes.iter().zip(&wts) {
            let s = (1.0 - c * c).max(0.0).sqrt();
            for j in 0..n_phi {
                let phi = 2.0 * PI * (j as f64 + 0.5) / n_phi as f64;
                let p = Vec3::new(s * phi.cos(), s * phi.sin(), c);
                points.push(p / p.norm());
                weights.push(w * 2.0 * PI / n_phi as f64);
            }
        }
        Self::new(&format!("product{n_theta}x{n_phi}"), points, weights)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate<F: Fn(&Vec3) -> f64>(&self, f: F) -> f64 {
        self.points.iter().zip(&self.weights).map(|(p, w)| w * f(p)).sum()
    }

    pub fn integrate_values(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

impl Default for DirectionGrid {
    fn default() -> Self {
        Self::lebedev(17).expect("built-in rule")
    }
}

fn signs(v: [f64; 3]) -> Vec<Vec3> {
    let mut out: Vec<Vec3> = Vec::new();
    for sx in [1.0, -1.0] {
        for sy in [1.0, -1.0] {
            for sz in [1.0, -1.0] {
                let p = Vec3::new(sx * v[0], sy * v[1], sz * v[2]);
                if !out.iter().any(|q| (q - p).norm() < 1e-14) {
                    out.push(p);
                }
            }
        }
    }
    out
}

fn permutations(v: [f64; 3]) -> Vec<[f64; 3]> {
    let idx = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out: Vec<[f64; 3]> = Vec::new();
    for p in idx {
        let w = [v[p[0]], v[p[1]], v[p[2]]];
        if !out.contains(&w) {
            out.push(w);
        }
    }
    out
}

fn generator(code: u8, a: f64) -> Vec<Vec3> {
    let base: [f64; 3] = match code {
        1 => [1.0, 0.0, 0.0],
        2 => [0.0, 1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt()],
        3 => [1.0 / 3f64.sqrt(); 3],
        4 => [a, a, (1.0 - 2.0 * a * a).sqrt()],
        5 => [a, (1.0 - a * a).sqrt(), 0.0],
        _ => unreachable!("unknown Lebedev generator"),
    };
    let mut out: Vec<Vec3> = Vec::new();
    for p in permutations(base) {
        for q in signs(p) {
            if !out.iter().any(|r| (r - q).norm() < 1e-14) {
                out.push(q);
            }
        }
    }
    out
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` (Newton on `P_n`).
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for l in 2..=n {
                let p2 = ((2 * l - 1) as f64 * x * p1 - (l - 1) as f64 * p0) / l as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 {
                1.0
            } else if n == 1 {
                x
            } else {
                p1
            };
            let pnm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pnm1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}
