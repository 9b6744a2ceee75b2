use super::grid::{Grid3, Vec3};
use crate::error::{Error, Result};
use num_complex::Complex64;
use rayon::prelude::*;
use std::io::{Read, Write};

/// Complex samples at the cell centres of a [`Grid3`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid3,
    values: Vec<Complex64>,
}

impl ScalarField {
    pub fn new(grid: Grid3, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "field has {} values for a grid of {} cells",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::InvalidArgument("field contains non-finite values".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid3) -> Self {
        let n = grid.len();
        Self { grid, values: vec![Complex64::new(0.0, 0.0); n] }
    }

    pub fn from_fn<F>(grid: Grid3, f: F) -> Self
    where
        F: Fn(&Vec3) -> Complex64 + Sync,
    {
        let values = (0..grid.len()).into_par_iter().map(|idx| f(&grid.center_of(idx))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn scaled(&self, s: Complex64) -> Self {
        Self { grid: self.grid.clone(), values: self.values.iter().map(|v| v * s).collect() }
    }

    pub fn map<F: Fn(&Vec3, Complex64) -> Complex64 + Sync>(&self, f: F) -> Self {
        let values = self.values.par_iter().enumerate().map(|(idx, &v)| f(&self.grid.center_of(idx), v)).collect();
        Self { grid: self.grid.clone(), values }
    }

    /// `self - other` on the same grid.
    pub fn sub(&self, other: &ScalarField) -> Result<Self> {
        self.check_same_grid(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(Self { grid: self.grid.clone(), values })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Discrete L2 norm, `sqrt(sum |f|^2 h^3)`.
    pub fn norm_l2(&self) -> f64 {
        (self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.cell_volume()).sqrt()
    }

    /// Discrete weighted norm `|| <x>^{-sigma} f ||_{L2}`.
    pub fn weighted_norm(&self, sigma: f64) -> f64 {
        let s: f64 = self
            .values
            .iter()
            .enumerate()
            .map(|(idx, v)| {
                let x = self.grid.center_of(idx);
                v.norm_sqr() * (1.0 + x.norm_squared()).powf(-sigma)
            })
            .sum();
        (s * self.grid.cell_volume()).sqrt()
    }

    /// Samples on an aligned sub-grid.
    pub fn restrict(&self, sub: &Grid3) -> Result<ScalarField> {
        let off = self
            .grid
            .aligned_offset(sub)
            .ok_or_else(|| Error::InvalidGrid("sub-grid is not aligned with the field grid".into()))?;
        let d = self.grid.dims();
        let sd = sub.dims();
        for a in 0..3 {
            if off[a] < 0 || off[a] as usize + sd[a] > d[a] {
                return Err(Error::InvalidGrid("sub-grid exceeds the field grid".into()));
            }
        }
        let mut values = Vec::with_capacity(sub.len());
        for i in 0..sd[0] {
            for j in 0..sd[1] {
                for k in 0..sd[2] {
                    let idx = self.grid.index(i + off[0] as usize, j + off[1] as usize, k + off[2] as usize);
                    values.push(self.values[idx]);
                }
            }
        }
        Ok(ScalarField { grid: sub.clone(), values })
    }

    /// Row-major little-endian complex doubles (re, im) without header.
    pub fn write_raw<W: Write>(&self, mut w: W) -> Result<()> {
        let mut buf = Vec::with_capacity(self.values.len() * 16);
        for v in &self.values {
            buf.extend_from_slice(&v.re.to_le_bytes());
            buf.extend_from_slice(&v.im.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_raw<R: Read>(grid: Grid3, mut r: R) -> Result<Self> {
        let mut buf = vec![0u8; grid.len() * 16];
        r.read_exact(&mut buf)?;
        let values = buf
            .chunks_exact(16)
            .map(|c| {
                let re = f64::from_le_bytes(c[0..8].try_into().unwrap());
                let im = f64::from_le_bytes(c[8..16].try_into().unwrap());
                Complex64::new(re, im)
            })
            .collect();
        Self::new(grid, values)
    }

    fn check_same_grid(&self, other: &ScalarField) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::InvalidGrid("fields live on different grids".into()));
        }
        Ok(())
    }
}
