use crate::grid::SparseTsdfGrid;
use crate::Vec3;

/// Trilinear TSDF at a scene point; `None` when any of the eight surrounding
/// voxels is χ or outside the domain.
#[inline]
pub fn sample_tsdf(grid: &SparseTsdfGrid, x: &Vec3) -> Option<f64> {
    let c = grid.config();
    let u = (x - c.box_origin) / c.voxel_size() - Vec3::repeat(0.5);
    let base = u.map(f64::floor);
    let f = u - base;
    let (i, j, k) = (base.x as i64, base.y as i64, base.z as i64);
    let mut acc = 0.0;
    for dz in 0..2 {
        let wz = if dz == 0 { 1.0 - f.z } else { f.z };
        for dy in 0..2 {
            let wy = if dy == 0 { 1.0 - f.y } else { f.y };
            for dx in 0..2 {
                let wx = if dx == 0 { 1.0 - f.x } else { f.x };
                acc += wx * wy * wz * grid.tsdf_at(i + dx, j + dy, k + dz)?;
            }
        }
    }
    Some(acc)
}

/// Central-difference TSDF gradient with a one-voxel step.
pub fn sample_gradient(grid: &SparseTsdfGrid, x: &Vec3) -> Option<Vec3> {
    let h = grid.config().voxel_size();
    let d = |e: Vec3| -> Option<f64> { Some(sample_tsdf(grid, &(x + e * h))? - sample_tsdf(grid, &(x - e * h))?) };
    Some(Vec3::new(d(Vec3::x())?, d(Vec3::y())?, d(Vec3::z())?) / (2.0 * h))
}
