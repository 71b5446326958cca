use rayon::prelude::*;

use crate::geometry::{DepthFrame, Intrinsics, NormalMap, Pose};
use crate::grid::SparseTsdfGrid;
use crate::Vec3;

use super::bounds::{compute_ray_bounds, RayBounds};
use super::sample::{sample_gradient, sample_tsdf};

/// Zero-crossing search stops when the bracket is narrower than this many
/// voxels.
const SECANT_TOLERANCE: f64 = 1e-2;
const MAX_SECANT_ITERATIONS: usize = 50;

/// Work counters of one raycast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RaycastStats {
    /// TSDF samples taken during the coarse march.
    pub steps: usize,
    pub hits: usize,
}

/// Renders depth and normals (in camera coordinates) of the fused surface.
pub fn raycast(
    grid: &SparseTsdfGrid,
    pose: &Pose,
    intrinsics: &Intrinsics,
    bounds: &RayBounds,
) -> (DepthFrame, NormalMap) {
    let (frame, normals, _) = raycast_with_stats(grid, pose, intrinsics, bounds);
    (frame, normals)
}

/// [`raycast`] with bounds computed for the same view.
pub fn render_view(grid: &SparseTsdfGrid, pose: &Pose, intrinsics: &Intrinsics) -> (DepthFrame, NormalMap) {
    let bounds = compute_ray_bounds(grid, pose, intrinsics);
    raycast(grid, pose, intrinsics, &bounds)
}

pub fn raycast_with_stats(
    grid: &SparseTsdfGrid,
    pose: &Pose,
    intrinsics: &Intrinsics,
    bounds: &RayBounds,
) -> (DepthFrame, NormalMap, RaycastStats) {
    let k = *intrinsics;
    let to_camera = pose.rotation.transpose();
    let rows: Vec<(Vec<f32>, Vec<Option<Vec3>>, usize)> = (0..k.height)
        .into_par_iter()
        .map(|v| {
            let mut depth = vec![0f32; k.width];
            let mut normals = vec![None; k.width];
            let mut steps = 0;
            for u in 0..k.width {
                let Some((t0, t1)) = bounds.at(u, v) else { continue };
                let ray = k.ray(u as f64, v as f64);
                let scale = ray.norm();
                let dir = pose.transform_vector(&(ray / scale));
                let (hit, n) = march(grid, &pose.translation, &dir, t0, t1);
                steps += n;
                if let Some(t) = hit {
                    let x = pose.translation + dir * t;
                    depth[u] = (t / scale) as f32;
                    normals[u] = sample_gradient(grid, &x)
                        .filter(|g| g.norm() > 0.0)
                        .map(|g| to_camera * g.normalize());
                }
            }
            (depth, normals, steps)
        })
        .collect();
    let mut depth = Vec::with_capacity(k.pixel_count());
    let mut normals = Vec::with_capacity(k.pixel_count());
    let mut stats = RaycastStats::default();
    for (d, n, s) in rows {
        stats.hits += d.iter().filter(|&&x| x > 0.0).count();
        stats.steps += s;
        depth.extend(d);
        normals.extend(n);
    }
    let frame = DepthFrame {
        intrinsics: k,
        depth,
        sigma: None,
    };
    let normals = NormalMap {
        width: k.width,
        height: k.height,
        normals,
    };
    (frame, normals, stats)
}

/// Coarse march at half the truncation distance followed by a bracketed
/// secant search on the first outside-to-inside crossing. Returns the hit
/// parameter and the number of coarse samples.
fn march(grid: &SparseTsdfGrid, origin: &Vec3, dir: &Vec3, t0: f64, t1: f64) -> (Option<f64>, usize) {
    let c = grid.config();
    let step = 0.5 * c.truncation;
    let f = |t: f64| sample_tsdf(grid, &(origin + dir * t));
    let mut prev: Option<(f64, f64)> = None;
    let mut steps = 0;
    let mut t = t0;
    loop {
        let at_end = t >= t1;
        let t_here = t.min(t1);
        steps += 1;
        match f(t_here) {
            Some(value) => {
                if let Some((tp, fp)) = prev {
                    if fp > 0.0 && value <= 0.0 {
                        let tol = SECANT_TOLERANCE * c.voxel_size();
                        return (Some(refine(&f, (tp, fp), (t_here, value), tol)), steps);
                    }
                }
                prev = Some((t_here, value));
            }
            None => prev = None,
        }
        if at_end {
            return (None, steps);
        }
        t += step;
    }
}

/// Regula falsi with the Illinois modification on a sign-changing bracket.
fn refine(f: &impl Fn(f64) -> Option<f64>, (mut a, mut fa): (f64, f64), (mut b, mut fb): (f64, f64), tol: f64) -> f64 {
    if fb == 0.0 {
        return b;
    }
    let mut side = 0i8;
    let mut x = b;
    for _ in 0..MAX_SECANT_ITERATIONS {
        x = (a * fb - b * fa) / (fb - fa);
        if (b - a).abs() < tol {
            break;
        }
        let Some(fx) = f(x) else { break };
        if fx == 0.0 {
            break;
        }
        if (fx > 0.0) == (fa > 0.0) {
            (a, fa) = (x, fx);
            if side == -1 {
                fb /= 2.0;
            }
            side = -1;
        } else {
            (b, fb) = (x, fx);
            if side == 1 {
                fa /= 2.0;
            }
            side = 1;
        }
    }
    x
}
