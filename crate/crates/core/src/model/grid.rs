use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub type Vec3 = nalgebra::Vector3<f64>;

/// Uniform cell-centred Cartesian grid. Cell `(i, j, k)` has centre
/// `origin + (i + 1/2, j + 1/2, k + 1/2) * h`; storage is row-major with the
/// last axis fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid3 {
    origin: [f64; 3],
    h: f64,
    dims: [usize; 3],
}

impl Grid3 {
    pub fn new(origin: Vec3, h: f64, dims: [usize; 3]) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidGrid(format!("spacing must be positive, got {h}")));
        }
        if dims.iter().any(|&n| n < 2) {
            return Err(Error::InvalidGrid(format!("need at least 2 cells per axis, got {dims:?}")));
        }
        if !origin.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidGrid("non-finite origin".into()));
        }
        Ok(Self { origin: [origin.x, origin.y, origin.z], h, dims })
    }

    /// Cube of `cells` cells per axis spanning `center ± half_width`.
    pub fn cube(center: Vec3, half_width: f64, cells: usize) -> Result<Self> {
        if !(half_width > 0.0) {
            return Err(Error::InvalidGrid(format!("half width must be positive, got {half_width}")));
        }
        let h = 2.0 * half_width / cells as f64;
        Self::new(center - Vec3::repeat(half_width), h, [cells; 3])
    }

    /// Cube with `cells` per axis covering a support box (the box is
    /// inflated to a cube around its centre).
    pub fn covering(support: &SupportBox, cells: usize) -> Result<Self> {
        let half = (support.hi - support.lo).max() / 2.0;
        Self::cube(support.center(), half, cells)
    }

    /// Grid of spacing `h` with an odd number of cells per axis, so that
    /// `center` is itself a cell centre, covering at least `center ± half_width`.
    pub fn centered_odd(center: Vec3, half_width: f64, h: f64) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::InvalidGrid(format!("spacing must be positive, got {h}")));
        }
        let m = ((half_width / h) - 0.5).ceil().max(1.0) as usize;
        let n = 2 * m + 1;
        let span = n as f64 * h / 2.0;
        Self::new(center - Vec3::repeat(span), h, [n; 3])
    }

    pub fn origin(&self) -> Vec3 {
        Vec3::new(self.origin[0], self.origin[1], self.origin[2])
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.h * self.h * self.h
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    #[inline]
    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let k = idx % self.dims[2];
        let rest = idx / self.dims[2];
        [rest / self.dims[1], rest % self.dims[1], k]
    }

    #[inline]
    pub fn center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        Vec3::new(
            self.origin[0] + (i as f64 + 0.5) * self.h,
            self.origin[1] + (j as f64 + 0.5) * self.h,
            self.origin[2] + (k as f64 + 0.5) * self.h,
        )
    }

    #[inline]
    pub fn center_of(&self, idx: usize) -> Vec3 {
        let [i, j, k] = self.unravel(idx);
        self.center(i, j, k)
    }

    pub fn centers(&self) -> Vec<Vec3> {
        (0..self.len()).map(|idx| self.center_of(idx)).collect()
    }

    /// Lower and upper corners of the covered region.
    pub fn bounds(&self) -> SupportBox {
        let lo = self.origin();
        let hi =
            lo + Vec3::new(self.dims[0] as f64 * self.h, self.dims[1] as f64 * self.h, self.dims[2] as f64 * self.h);
        SupportBox { lo, hi }
    }

    /// Index of the cell containing `p`, if any.
    pub fn locate(&self, p: &Vec3) -> Option<[usize; 3]> {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let s = (p[a] - self.origin[a]) / self.h;
            if !(s >= 0.0) || s >= self.dims[a] as f64 {
                return None;
            }
            out[a] = s.floor() as usize;
        }
        Some(out)
    }

    /// Smallest sub-grid on this grid's lattice whose cells cover `region`.
    pub fn aligned_cover(&self, region: &SupportBox) -> Result<Grid3> {
        let mut lo = [0usize; 3];
        let mut dims = [0usize; 3];
        for a in 0..3 {
            let s0 = ((region.lo[a] - self.origin[a]) / self.h).floor();
            let s1 = ((region.hi[a] - self.origin[a]) / self.h).ceil();
            if s0 < 0.0 || s1 > self.dims[a] as f64 {
                return Err(Error::InvalidGrid(format!("region {region:?} exceeds the grid")));
            }
            lo[a] = s0 as usize;
            dims[a] = ((s1 - s0) as usize).max(2);
        }
        let origin = self.origin() + Vec3::new(lo[0] as f64, lo[1] as f64, lo[2] as f64) * self.h;
        Grid3::new(origin, self.h, dims)
    }

    /// Integer offset of `other`'s origin in units of `h`, when the two
    /// grids share spacing and their cell lattices coincide.
    pub fn aligned_offset(&self, other: &Grid3) -> Option<[i64; 3]> {
        if (self.h - other.h).abs() > 1e-12 * self.h {
            return None;
        }
        let mut off = [0i64; 3];
        for a in 0..3 {
            let s = (other.origin[a] - self.origin[a]) / self.h;
            let r = s.round();
            if (s - r).abs() > 1e-6 {
                return None;
            }
            off[a] = r as i64;
        }
        Some(off)
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportBox {
    pub lo: Vec3,
    pub hi: Vec3,
}

impl SupportBox {
    pub fn cube(center: Vec3, half_width: f64) -> Self {
        Self { lo: center - Vec3::repeat(half_width), hi: center + Vec3::repeat(half_width) }
    }

    pub fn center(&self) -> Vec3 {
        (self.lo + self.hi) / 2.0
    }

    pub fn half_widths(&self) -> Vec3 {
        (self.hi - self.lo) / 2.0
    }

    /// Radius of the circumscribed ball about the centre.
    pub fn radius(&self) -> f64 {
        self.half_widths().norm()
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.lo[a] && p[a] <= self.hi[a])
    }

    pub fn contains_box(&self, other: &SupportBox, slack: f64) -> bool {
        (0..3).all(|a| other.lo[a] >= self.lo[a] - slack && other.hi[a] <= self.hi[a] + slack)
    }

    pub fn intersects(&self, other: &SupportBox) -> bool {
        (0..3).all(|a| self.lo[a] < other.hi[a] && other.lo[a] < self.hi[a])
    }

    pub fn shifted(&self, by: &Vec3) -> Self {
        Self { lo: self.lo + by, hi: self.hi + by }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_parameters() {
        assert!(Grid3::new(Vec3::zeros(), 0.0, [4, 4, 4]).is_err());
        assert!(Grid3::new(Vec3::zeros(), 0.1, [1, 4, 4]).is_err());
        assert!(Grid3::new(Vec3::zeros(), -1.0, [4, 4, 4]).is_err());
    }

    #[test]
    fn index_round_trip_and_centres() {
        let g = Grid3::new(Vec3::new(-1.0, 0.0, 2.0), 0.5, [3, 4, 5]).unwrap();
        for idx in 0..g.len() {
            let [i, j, k] = g.unravel(idx);
            assert_eq!(g.index(i, j, k), idx);
        }
        let c = g.center(1, 2, 3);
        assert!((c - Vec3::new(-0.25, 1.25, 3.75)).norm() < 1e-15);
        assert_eq!(g.locate(&c), Some([1, 2, 3]));
        assert_eq!(g.locate(&Vec3::new(10.0, 0.0, 0.0)), None);
    }

    #[test]
    fn odd_grid_has_centre_cell() {
        let g = Grid3::centered_odd(Vec3::zeros(), 2.1, 0.5).unwrap();
        assert_eq!(g.dims()[0] % 2, 1);
        let mid = g.dims()[0] / 2;
        assert!(g.center(mid, mid, mid).norm() < 1e-14);
        assert!(g.bounds().contains_box(&SupportBox::cube(Vec3::zeros(), 2.1), 0.0));
    }

    #[test]
    fn aligned_offsets() {
        let a = Grid3::cube(Vec3::zeros(), 4.0, 16).unwrap();
        let b = Grid3::new(Vec3::new(-2.0, -2.0, -1.5), 0.5, [4, 4, 4]).unwrap();
        assert_eq!(a.aligned_offset(&b), Some([4, 4, 5]));
        let c = Grid3::new(Vec3::new(-2.1, -2.0, -1.5), 0.5, [4, 4, 4]).unwrap();
        assert_eq!(a.aligned_offset(&c), None);
    }
}
