use rayon::prelude::*;

use crate::geometry::{DepthFrame, NormalMap, Pose};
use crate::Vec3;

use super::{MatchParams, PointMatch};

/// Projective data association.
///
/// Each valid source point is moved by `delta` (source camera to target
/// camera), projected into the target image and paired with the target
/// pixel it lands on. Pairs with a missing point or normal, a distance above
/// `max_distance` or a normal deviation above `max_normal_angle` are
/// rejected. Matches come out in source pixel order.
pub fn match_points(
    source: &DepthFrame,
    source_normals: &NormalMap,
    target: &DepthFrame,
    target_normals: &NormalMap,
    delta: &Pose,
    params: &MatchParams,
) -> Vec<PointMatch> {
    let k = &target.intrinsics;
    let min_cos = params.max_normal_angle.cos();
    let max_d2 = params.max_distance * params.max_distance;
    (0..source.height())
        .into_par_iter()
        .flat_map_iter(|v| {
            let mut row = Vec::new();
            for u in 0..source.width() {
                let (Some(p), Some(np)) = (source.point_at(u, v), source_normals.at(u, v)) else {
                    continue;
                };
                let p = delta.transform_point(&p);
                let Some((tu, tv, _)) = k.project(&p) else { continue };
                let Some((tu, tv)) = k.nearest_pixel(tu, tv) else {
                    continue;
                };
                let (Some(q), Some(n)) = (target.point_at(tu, tv), target_normals.at(tu, tv)) else {
                    continue;
                };
                if (p - q).norm_squared() > max_d2 {
                    continue;
                }
                let np: Vec3 = delta.transform_vector(&np);
                if np.dot(&n) < min_cos {
                    continue;
                }
                row.push(PointMatch { p, q, n });
            }
            row
        })
        .collect()
}
