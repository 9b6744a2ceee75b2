//! Complex linear algebra used by the solvers: a matrix-free operator
//! trait, restarted GMRES with a left diagonal preconditioner, dense LU, and
//! a power-iteration spectral-radius estimate for fixed-point iteration.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type C64 = Complex64;

pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    /// `y = A x`
    fn apply(&self, x: &[C64], y: &mut [C64]);
}

pub fn norm(x: &[C64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// `||A x - b|| / ||b||` (or `||A x||` when `b = 0`).
pub fn relative_residual(op: &dyn LinearOperator, x: &[C64], b: &[C64]) -> f64 {
    let mut ax = vec![C64::new(0.0, 0.0); op.dim()];
    op.apply(x, &mut ax);
    let r: Vec<C64> = ax.iter().zip(b).map(|(a, c)| a - c).collect();
    let nb = norm(b);
    if nb > 0.0 {
        norm(&r) / nb
    } else {
        norm(&r)
    }
}

#[derive(Debug, Clone)]
pub struct GmresOptions {
    pub tol: f64,
    pub restart: usize,
    pub max_iter: usize,
}

impl Default for GmresOptions {
    fn default() -> Self {
        Self { tol: 1e-8, restart: 40, max_iter: 2000 }
    }
}

#[derive(Debug, Clone)]
pub struct GmresOutcome {
    pub x: Vec<C64>,
    pub iterations: usize,
    /// True relative residual of the unpreconditioned system.
    pub residual: f64,
    /// Ratio of extreme singular values of the last Hessenberg matrix.
    pub condition_estimate: f64,
}

/// Restarted GMRES on `D^{-1} A x = D^{-1} b` with `D = diag`. Convergence
/// is declared on the true residual `||A x - b|| / ||b||`.
pub fn gmres(op: &dyn LinearOperator, b: &[C64], diag: Option<&[C64]>, opts: &GmresOptions) -> Result<GmresOutcome> {
    let n = op.dim();
    assert_eq!(b.len(), n);
    let nb = norm(b);
    if nb == 0.0 {
        return Ok(GmresOutcome {
            x: vec![C64::new(0.0, 0.0); n],
            iterations: 0,
            residual: 0.0,
            condition_estimate: 1.0,
        });
    }
    let precond = |v: &mut [C64]| {
        if let Some(d) = diag {
            for (x, dd) in v.iter_mut().zip(d) {
                *x /= dd;
            }
        }
    };
    let m = opts.restart.max(1);
    let mut x = vec![C64::new(0.0, 0.0); n];
    let mut total = 0usize;
    let mut work = vec![C64::new(0.0, 0.0); n];
    let mut cond = 1.0;
    // Inner tolerance on the preconditioned residual is tightened when the
    // true residual lags behind.
    let mut inner_tol = opts.tol;
    loop {
        op.apply(&x, &mut work);
        let mut r: Vec<C64> = b.iter().zip(&work).map(|(bb, a)| bb - a).collect();
        let true_res = norm(&r) / nb;
        if true_res <= opts.tol {
            return Ok(GmresOutcome { x, iterations: total, residual: true_res, condition_estimate: cond });
        }
        if total >= opts.max_iter {
            return Err(Error::IterationLimit { iterations: total, residual: true_res });
        }
        precond(&mut r);
        let beta = norm(&r);
        let mut pb = b.to_vec();
        precond(&mut pb);
        let target = inner_tol * norm(&pb);

        let mut v: Vec<Vec<C64>> = Vec::with_capacity(m + 1);
        v.push(r.iter().map(|z| z / beta).collect());
        let mut hess = vec![vec![C64::new(0.0, 0.0); m]; m + 1];
        let mut cs = vec![C64::new(0.0, 0.0); m];
        let mut sn = vec![C64::new(0.0, 0.0); m];
        let mut g = vec![C64::new(0.0, 0.0); m + 1];
        g[0] = C64::new(beta, 0.0);
        let mut k_used = 0;
        for j in 0..m {
            op.apply(&v[j], &mut work);
            let mut w = work.clone();
            precond(&mut w);
            for i in 0..=j {
                let hij = dot(&v[i], &w);
                hess[i][j] = hij;
                for (wk, vk) in w.iter_mut().zip(&v[i]) {
                    *wk -= hij * vk;
                }
            }
            let hn = norm(&w);
            hess[j + 1][j] = C64::new(hn, 0.0);
            total += 1;
            k_used = j + 1;
            // apply previous rotations
            let mut col: Vec<C64> = (0..=j + 1).map(|i| hess[i][j]).collect();
            for i in 0..j {
                let t = cs[i].conj() * col[i] + sn[i].conj() * col[i + 1];
                col[i + 1] = -sn[i] * col[i] + cs[i] * col[i + 1];
                col[i] = t;
            }
            let (a, bb) = (col[j], col[j + 1]);
            let rr = (a.norm_sqr() + bb.norm_sqr()).sqrt();
            if rr == 0.0 {
                cs[j] = C64::new(1.0, 0.0);
                sn[j] = C64::new(0.0, 0.0);
            } else {
                cs[j] = a / rr;
                sn[j] = bb / rr;
            }
            col[j] = cs[j].conj() * a + sn[j].conj() * bb;
            col[j + 1] = C64::new(0.0, 0.0);
            g[j + 1] = -sn[j] * g[j];
            g[j] = cs[j].conj() * g[j];
            for i in 0..=j + 1 {
                hess_rot_store(&mut hess, i, j, col[i]);
            }
            if hn > 0.0 {
                v.push(w.iter().map(|z| z / hn).collect());
            }
            if g[j + 1].norm() <= target || hn == 0.0 || total >= opts.max_iter {
                break;
            }
        }
        // back substitution on the rotated (upper triangular) Hessenberg
        let k = k_used;
        let mut y = vec![C64::new(0.0, 0.0); k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for l in (i + 1)..k {
                s -= hess[i][l] * y[l];
            }
            y[i] = s / hess[i][i];
        }
        for (i, yi) in y.iter().enumerate() {
            for (xk, vk) in x.iter_mut().zip(&v[i]) {
                *xk += yi * vk;
            }
        }
        let diag_abs: Vec<f64> = (0..k).map(|i| hess[i][i].norm()).collect();
        let hi = diag_abs.iter().cloned().fold(0.0, f64::max);
        let lo = diag_abs.iter().cloned().fold(f64::INFINITY, f64::min);
        if lo > 0.0 {
            cond = f64::max(cond, hi / lo);
        }
        inner_tol *= 0.5;
    }
}

fn hess_rot_store(h: &mut [Vec<C64>], i: usize, j: usize, v: C64) {
    h[i][j] = v;
}

/// Dense operator backed by a column-major matrix.
pub struct DenseOperator {
    pub matrix: DMatrix<C64>,
}

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn apply(&self, x: &[C64], y: &mut [C64]) {
        let v = &self.matrix * DVector::from_column_slice(x);
        y.copy_from_slice(v.as_slice());
    }
}

/// Solves `A x = b` by LU with partial pivoting. Returns the solution and
/// the ratio of extreme pivot moduli as a cheap condition indicator.
pub fn dense_solve(a: DMatrix<C64>, b: &[C64]) -> Result<(Vec<C64>, f64)> {
    let lu = a.lu();
    let u = lu.u();
    let piv: Vec<f64> = (0..u.nrows()).map(|i| u[(i, i)].norm()).collect();
    let hi = piv.iter().cloned().fold(0.0, f64::max);
    let lo = piv.iter().cloned().fold(f64::INFINITY, f64::min);
    let x = lu
        .solve(&DVector::from_column_slice(b))
        .ok_or(Error::IterationLimit { iterations: 0, residual: f64::INFINITY })?;
    Ok((x.as_slice().to_vec(), if lo > 0.0 { hi / lo } else { f64::INFINITY }))
}

/// Power-iteration estimate of the spectral radius of `op`.
pub fn spectral_radius(op: &dyn LinearOperator, iterations: usize) -> f64 {
    let n = op.dim();
    let mut x: Vec<C64> =
        (0..n).map(|i| C64::new(1.0 + 0.1 * ((i * 7919) % 13) as f64, 0.05 * ((i * 104729) % 7) as f64)).collect();
    let nx = norm(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    let mut y = vec![C64::new(0.0, 0.0); n];
    let mut est = 0.0;
    let mut prev = 0.0;
    for it in 0..iterations {
        op.apply(&x, &mut y);
        let ny = norm(&y);
        if ny == 0.0 {
            return 0.0;
        }
        prev = est;
        est = ny;
        x.iter_mut().zip(&y).for_each(|(a, b)| *a = b / ny);
        if it > 5 && (est - prev).abs() < 1e-4 * est {
            break;
        }
    }
    let _ = prev;
    est
}

/// Fixed-point iteration `x <- b - K x` for `(I + K) x = b`.
pub fn fixed_point(k: &dyn LinearOperator, b: &[C64], tol: f64, max_iter: usize) -> Result<(Vec<C64>, usize)> {
    let n = k.dim();
    let nb = norm(b).max(f64::MIN_POSITIVE);
    let mut x = b.to_vec();
    let mut kx = vec![C64::new(0.0, 0.0); n];
    for it in 1..=max_iter {
        k.apply(&x, &mut kx);
        let next: Vec<C64> = b.iter().zip(&kx).map(|(bb, a)| bb - a).collect();
        let change = norm(&next.iter().zip(&x).map(|(a, c)| a - c).collect::<Vec<_>>()) / nb;
        x = next;
        if change <= tol {
            return Ok((x, it));
        }
    }
    Err(Error::IterationLimit { iterations: max_iter, residual: f64::NAN })
}
