use crate::geometry::{compute_normals, discontinuity_threshold, DepthFrame, Pose};
use crate::grid::GridConfig;
use crate::Vec3;

use super::FusionParams;

/// Smallest measurement variance handed to the filters, in m².
pub const MIN_MEASUREMENT_VARIANCE: f64 = 1e-12;

/// Lower bound of the per-pixel quality factor.
const MIN_QUALITY: f64 = 0.05;

/// Pixels this close to a depth discontinuity get half quality.
const EDGE_RADIUS: usize = 2;

/// Fixed step, in pixels, of the optional local search for the closest
/// surface point.
const REFINEMENT_STEP: f64 = 0.5;

/// One voxel's view of a depth frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementSample {
    /// Signed distance, positive between camera and surface.
    pub tsdf: f64,
    /// Measurement variance in m².
    pub variance: f64,
    /// Blend weight for the simple and weighted updates.
    pub weight: f64,
}

/// Per-frame state shared by all voxel estimates.
pub struct MeasurementContext<'a> {
    frame: &'a DepthFrame,
    world_to_camera: Pose,
    params: FusionParams,
    truncation: f64,
    voxel_size: f64,
    quality: Option<Vec<f64>>,
}

impl<'a> MeasurementContext<'a> {
    /// `pose` maps camera to scene coordinates. The voxel size enters the
    /// depth discontinuity threshold.
    pub fn new(frame: &'a DepthFrame, pose: &Pose, params: &FusionParams, truncation: f64, voxel_size: f64) -> Self {
        let quality = params.edge_weighting.then(|| quality_map(frame, voxel_size));
        Self {
            frame,
            world_to_camera: pose.inverse(),
            params: *params,
            truncation,
            voxel_size,
            quality,
        }
    }

    /// Measurement for a scene point, `None` for χ.
    #[inline]
    pub fn estimate(&self, x: &Vec3) -> Option<MeasurementSample> {
        let k = &self.frame.intrinsics;
        let p = self.world_to_camera.transform_point(x);
        let (u, v, z) = k.project(&p)?;
        let (depth, pu, pv) = interpolated_depth(self.frame, u, v, self.voxel_size)?;
        let mut tsdf = depth - z;
        if tsdf.abs() > self.truncation {
            return None;
        }
        if self.params.refinement_steps > 0 {
            tsdf = self.refine(&p, u, v, tsdf);
        }
        let q = match &self.quality {
            Some(map) => map[pv * k.width + pu],
            None => 1.0,
        };
        let sd = self.params.sigma0 * depth * depth;
        Some(MeasurementSample {
            tsdf,
            variance: (sd * sd).max(MIN_MEASUREMENT_VARIANCE) / q,
            weight: self.params.w_fixed * q,
        })
    }

    /// Fixed-step descent over the image plane towards the depth-map point
    /// closest to `p`. Keeps the sign of the projective distance and never
    /// increases its magnitude.
    fn refine(&self, p: &Vec3, u: f64, v: f64, tsdf: f64) -> f64 {
        let k = &self.frame.intrinsics;
        let dist2 = |u: f64, v: f64| -> Option<f64> {
            let (d, _, _) = interpolated_depth(self.frame, u, v, self.voxel_size)?;
            Some((k.unproject(u, v, d) - p).norm_squared())
        };
        let Some(mut best) = dist2(u, v) else {
            return tsdf;
        };
        let (mut u, mut v) = (u, v);
        for _ in 0..self.params.refinement_steps {
            let h = REFINEMENT_STEP;
            let (Some(a), Some(b), Some(c), Some(d)) =
                (dist2(u + h, v), dist2(u - h, v), dist2(u, v + h), dist2(u, v - h))
            else {
                break;
            };
            let g = (a - b, c - d);
            let len = (g.0 * g.0 + g.1 * g.1).sqrt();
            if !(len > 0.0) {
                break;
            }
            let (nu, nv) = (u - h * g.0 / len, v - h * g.1 / len);
            match dist2(nu, nv) {
                Some(f) if f < best => {
                    best = f;
                    (u, v) = (nu, nv);
                }
                _ => break,
            }
        }
        tsdf.signum() * best.sqrt().min(tsdf.abs())
    }
}

/// Largest depth spread across a pixel's interpolation cell that is still
/// treated as continuous surface.
#[inline]
pub fn interpolation_threshold(frame: &DepthFrame, u: usize, v: usize, voxel_size: f64) -> f64 {
    discontinuity_threshold(frame.sigma_at(u, v).unwrap_or(0.0), voxel_size)
}

/// Measured depth at a sub-pixel position with the nearest pixel.
///
/// The nearest pixel must be valid. Depth is interpolated bilinearly between
/// the four surrounding pixel centers when all are valid and within
/// [`interpolation_threshold`] of each other; otherwise the nearest pixel's
/// depth is used.
#[inline]
pub fn interpolated_depth(frame: &DepthFrame, u: f64, v: f64, voxel_size: f64) -> Option<(f64, usize, usize)> {
    let k = &frame.intrinsics;
    let (pu, pv) = k.nearest_pixel(u, v)?;
    let nearest = frame.depth_at(pu, pv)?;
    let (u0, v0) = (u.floor(), v.floor());
    if u0 >= 0.0 && v0 >= 0.0 && u0 + 1.0 < k.width as f64 && v0 + 1.0 < k.height as f64 {
        let (iu, iv) = (u0 as usize, v0 as usize);
        if let (Some(d00), Some(d10), Some(d01), Some(d11)) = (
            frame.depth_at(iu, iv),
            frame.depth_at(iu + 1, iv),
            frame.depth_at(iu, iv + 1),
            frame.depth_at(iu + 1, iv + 1),
        ) {
            let lo = d00.min(d10).min(d01).min(d11);
            let hi = d00.max(d10).max(d01).max(d11);
            if hi - lo <= interpolation_threshold(frame, pu, pv, voxel_size) {
                let (a, b) = (u - u0, v - v0);
                let top = d00 + a * (d10 - d00);
                let bottom = d01 + a * (d11 - d01);
                return Some((top + b * (bottom - top), pu, pv));
            }
        }
    }
    Some((nearest, pu, pv))
}

/// Projective measurement for one voxel center without edge weighting.
pub fn estimate_measurement(
    frame: &DepthFrame,
    pose: &Pose,
    voxel_center: &Vec3,
    params: &FusionParams,
    config: &GridConfig,
) -> Option<MeasurementSample> {
    let params = FusionParams {
        edge_weighting: false,
        ..*params
    };
    MeasurementContext::new(frame, pose, &params, config.truncation, config.voxel_size()).estimate(voxel_center)
}

/// Per-pixel confidence in `[MIN_QUALITY, 1]`: the cosine between view ray
/// and surface normal, halved near depth discontinuities.
pub fn quality_map(frame: &DepthFrame, voxel_size: f64) -> Vec<f64> {
    let k = &frame.intrinsics;
    let (w, h) = (k.width, k.height);
    let normals = compute_normals(frame, voxel_size);
    let mut edge = vec![false; w * h];
    for v in 0..h {
        for u in 0..w {
            if frame.depth_at(u, v).is_some() && normals.at(u, v).is_none() {
                let (u0, u1) = (u.saturating_sub(EDGE_RADIUS), (u + EDGE_RADIUS).min(w - 1));
                let (v0, v1) = (v.saturating_sub(EDGE_RADIUS), (v + EDGE_RADIUS).min(h - 1));
                for ev in v0..=v1 {
                    edge[ev * w + u0..=ev * w + u1].fill(true);
                }
            }
        }
    }
    (0..w * h)
        .map(|i| {
            let (u, v) = (i % w, i / w);
            let cos = normals
                .at(u, v)
                .map(|n| n.dot(&k.ray(u as f64, v as f64).normalize()).abs())
                .unwrap_or(1.0);
            let q = if edge[i] { 0.5 * cos } else { cos };
            q.max(MIN_QUALITY)
        })
        .collect()
}
