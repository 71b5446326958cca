use rayon::prelude::*;

use crate::geometry::{DepthFrame, Pose};
use crate::grid::{BlockCoord, SparseTsdfGrid};
use crate::Vec3;

use super::measurement::interpolation_threshold;

/// Blocks touched by one frame.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BlockSelection {
    /// Blocks overlapping the truncation shell around the measured surface.
    pub allocate: Vec<BlockCoord>,
    /// `allocate` plus already allocated blocks that are visible.
    pub update: Vec<BlockCoord>,
}

/// Finds the blocks a frame can change.
///
/// For every valid pixel the volume of points whose nearest pixel it is and
/// whose depth lies within δ of any depth the measurement can interpolate to
/// is a truncated pyramid; all blocks overlapping its bounding box are listed
/// for allocation. Every voxel that can receive a measurement therefore lies
/// in a listed block.
///
/// Visible blocks are allocated blocks intersecting the view frustum that are
/// not hidden more than δ behind the measured surface over their whole
/// footprint.
pub fn select_update_blocks(grid: &SparseTsdfGrid, frame: &DepthFrame, pose: &Pose) -> BlockSelection {
    let config = grid.config();
    let k = &frame.intrinsics;
    let delta = config.truncation;
    let n = config.blocks_per_axis as i64;
    let block = config.block_size();
    let voxel = config.voxel_size();

    let mut allocate: Vec<usize> = (0..k.height)
        .into_par_iter()
        .flat_map_iter(|v| {
            let mut out = Vec::new();
            for u in 0..k.width {
                let Some(d) = frame.depth_at(u, v) else { continue };
                // interpolation may blend in neighbors within the threshold
                let threshold = interpolation_threshold(frame, u, v, voxel);
                let (mut d_lo, mut d_hi) = (d, d);
                for nv in v.saturating_sub(1)..=(v + 1).min(k.height - 1) {
                    for nu in u.saturating_sub(1)..=(u + 1).min(k.width - 1) {
                        if let Some(dn) = frame.depth_at(nu, nv) {
                            if (dn - d).abs() <= threshold {
                                d_lo = d_lo.min(dn);
                                d_hi = d_hi.max(dn);
                            }
                        }
                    }
                }
                let mut lo = Vec3::repeat(f64::INFINITY);
                let mut hi = Vec3::repeat(f64::NEG_INFINITY);
                for z in [(d_lo - delta).max(1e-9), d_hi + delta] {
                    for (du, dv) in [(-0.5, -0.5), (0.5, -0.5), (-0.5, 0.5), (0.5, 0.5)] {
                        let p = pose.transform_point(&k.unproject(u as f64 + du, v as f64 + dv, z));
                        lo = lo.inf(&p);
                        hi = hi.sup(&p);
                    }
                }
                let b0 = ((lo - config.box_origin) / block).map(|c| (c.floor() as i64).max(0));
                let b1 = ((hi - config.box_origin) / block).map(|c| (c.floor() as i64).min(n - 1));
                for bz in b0.z..=b1.z {
                    for by in b0.y..=b1.y {
                        for bx in b0.x..=b1.x {
                            out.push(config.block_index([bx as usize, by as usize, bz as usize]));
                        }
                    }
                }
                out.sort_unstable();
                out.dedup();
            }
            out
        })
        .collect();
    allocate.sort_unstable();
    allocate.dedup();

    let mut update = allocate.clone();
    let near = k.near;
    let far = k.far;
    for b in grid.occupied_blocks_in_frustum(pose, k, near, far) {
        if !is_occluded(config.block_bounds(b), frame, pose, delta) {
            update.push(config.block_index(b));
        }
    }
    update.sort_unstable();
    update.dedup();

    BlockSelection {
        allocate: allocate.into_iter().map(|i| config.block_coord(i)).collect(),
        update: update.into_iter().map(|i| config.block_coord(i)).collect(),
    }
}

/// Conservative occlusion test: true only when every pixel under the block's
/// image footprint is valid and the block lies entirely more than δ behind
/// the deepest of them.
fn is_occluded((lo, hi): (Vec3, Vec3), frame: &DepthFrame, pose: &Pose, delta: f64) -> bool {
    let k = &frame.intrinsics;
    let to_camera = pose.inverse();
    let (mut u0, mut v0, mut u1, mut v1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut z_min = f64::INFINITY;
    for i in 0..8 {
        let corner = Vec3::new(
            if i & 1 == 0 { lo.x } else { hi.x },
            if i & 2 == 0 { lo.y } else { hi.y },
            if i & 4 == 0 { lo.z } else { hi.z },
        );
        let Some((u, v, z)) = k.project(&to_camera.transform_point(&corner)) else {
            return false;
        };
        (u0, v0, u1, v1) = (u0.min(u), v0.min(v), u1.max(u), v1.max(v));
        z_min = z_min.min(z);
    }
    let clamp = |x: f64, n: usize| x.round().clamp(0.0, n as f64 - 1.0) as usize;
    let (u0, u1) = (clamp(u0, k.width), clamp(u1, k.width));
    let (v0, v1) = (clamp(v0, k.height), clamp(v1, k.height));
    let mut deepest = 0.0f64;
    for v in v0..=v1 {
        for u in u0..=u1 {
            match frame.depth_at(u, v) {
                Some(d) => deepest = deepest.max(d),
                None => return false,
            }
        }
    }
    z_min > deepest + delta
}
