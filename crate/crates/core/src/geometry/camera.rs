use serde::{Deserialize, Serialize};

use crate::error::{FusionError, Result};
use crate::Vec3;

/// Calibrated pinhole camera with a depth validity range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub near: f64,
    pub far: f64,
}

impl Intrinsics {
    #[allow(clippy::too_many_arguments)]
    pub fn new(width: usize, height: usize, fx: f64, fy: f64, cx: f64, cy: f64, near: f64, far: f64) -> Result<Self> {
        let intrinsics = Self {
            width,
            height,
            fx,
            fy,
            cx,
            cy,
            near,
            far,
        };
        intrinsics.validate()?;
        Ok(intrinsics)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(FusionError::InvalidConfig("image size must be non-zero".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(FusionError::InvalidConfig("focal lengths must be positive".into()));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(FusionError::InvalidConfig("need 0 < near < far".into()));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Camera-frame point seen at pixel `(u, v)` with the given z depth.
    #[inline]
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx * depth, (v - self.cy) / self.fy * depth, depth)
    }

    /// Sub-pixel image position and depth of a camera-frame point; `None` for
    /// points on or behind the image plane.
    #[inline]
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy, p.z))
    }

    /// Nearest pixel of a projection, if it lies inside the image.
    #[inline]
    pub fn nearest_pixel(&self, u: f64, v: f64) -> Option<(usize, usize)> {
        let (ui, vi) = (u.round(), v.round());
        if ui < 0.0 || vi < 0.0 || ui >= self.width as f64 || vi >= self.height as f64 {
            return None;
        }
        Some((ui as usize, vi as usize))
    }

    /// Ray direction through a pixel, scaled so that its z component is 1.
    #[inline]
    pub fn ray(&self, u: f64, v: f64) -> Vec3 {
        self.unproject(u, v, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn camera() -> Intrinsics {
        Intrinsics::new(320, 240, 300.0, 310.0, 159.5, 119.5, 0.1, 5.0).unwrap()
    }

    #[test]
    fn principal_point_unprojects_onto_axis() {
        let k = camera();
        let p = k.unproject(k.cx, k.cy, 1.0);
        assert_eq!(p, Vec3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn project_unproject_round_trip() {
        let k = camera();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let u = rng.random_range(0.0..k.width as f64);
            let v = rng.random_range(0.0..k.height as f64);
            let d = rng.random_range(k.near..k.far);
            let (u2, v2, d2) = k.project(&k.unproject(u, v, d)).unwrap();
            assert!((u2 - u).abs() <= 1e-6 * u.abs().max(1.0));
            assert!((v2 - v).abs() <= 1e-6 * v.abs().max(1.0));
            assert!((d2 - d).abs() <= 1e-6 * d);
        }
    }

    #[test]
    fn points_behind_camera_do_not_project() {
        assert!(camera().project(&Vec3::new(0.0, 0.0, -1.0)).is_none());
        assert!(camera().project(&Vec3::new(0.3, 0.0, 0.0)).is_none());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(Intrinsics::new(0, 10, 1.0, 1.0, 0.0, 0.0, 0.1, 1.0).is_err());
        assert!(Intrinsics::new(10, 10, -1.0, 1.0, 0.0, 0.0, 0.1, 1.0).is_err());
        assert!(Intrinsics::new(10, 10, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0).is_err());
    }
}
