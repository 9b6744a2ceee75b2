use super::grid::Vec3;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Incident wave vector `k` and source distance `D`; the source sits at
/// `q_D = -n D` with `n = k/|k|`, upstream of the scatterer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveContext {
    k: [f64; 3],
    distance: f64,
}

impl WaveContext {
    pub fn new(k: Vec3, distance: f64) -> Result<Self> {
        if !(k.norm() > 0.0) || !k.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidArgument(format!("wave vector must be non-zero, got {k:?}")));
        }
        if !(distance > 0.0) || !distance.is_finite() {
            return Err(Error::InvalidArgument(format!("source distance must be positive, got {distance}")));
        }
        Ok(Self { k: [k.x, k.y, k.z], distance })
    }

    /// Plane-wave context; the distance is irrelevant and set to 1.
    pub fn plane(k: Vec3) -> Result<Self> {
        Self::new(k, 1.0)
    }

    pub fn with_distance(&self, distance: f64) -> Result<Self> {
        Self::new(self.k(), distance)
    }

    pub fn k(&self) -> Vec3 {
        Vec3::new(self.k[0], self.k[1], self.k[2])
    }

    pub fn k_mag(&self) -> f64 {
        self.k().norm()
    }

    /// `E_k = |k|^2 / 2`.
    pub fn energy(&self) -> f64 {
        0.5 * self.k().norm_squared()
    }

    pub fn direction(&self) -> Vec3 {
        self.k() / self.k_mag()
    }

    pub fn distance(&self) -> f64 {
        self.distance
    }

    pub fn source_position(&self) -> Vec3 {
        -self.direction() * self.distance
    }
}
