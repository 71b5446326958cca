use rayon::prelude::*;

use crate::geometry::{Intrinsics, Pose};
use crate::grid::SparseTsdfGrid;
use crate::Vec3;

/// Padding added to each interval so that samples computed from a boundary
/// parameter never fall just outside it, as a fraction of the box side.
const PAD: f64 = 1e-9;

/// Per-pixel parameter interval along the unit-length view ray, covering all
/// allocated blocks the ray crosses between the near and far planes.
#[derive(Debug, Clone, PartialEq)]
pub struct RayBounds {
    pub width: usize,
    pub height: usize,
    pub intervals: Vec<Option<(f64, f64)>>,
}

impl RayBounds {
    #[inline]
    pub fn at(&self, u: usize, v: usize) -> Option<(f64, f64)> {
        self.intervals[v * self.width + u]
    }

    pub fn nonempty_count(&self) -> usize {
        self.intervals.iter().filter(|i| i.is_some()).count()
    }
}

/// Slab test of a ray against an axis-aligned box; returns the parameter
/// interval inside the box clipped to `[t_min, t_max]`.
pub fn ray_box(origin: &Vec3, dir: &Vec3, lo: &Vec3, hi: &Vec3, t_min: f64, t_max: f64) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = (t_min, t_max);
    for a in 0..3 {
        if dir[a] == 0.0 {
            if origin[a] < lo[a] || origin[a] > hi[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let (mut near, mut far) = ((lo[a] - origin[a]) * inv, (hi[a] - origin[a]) * inv);
        if near > far {
            std::mem::swap(&mut near, &mut far);
        }
        t0 = t0.max(near);
        t1 = t1.min(far);
        if t0 > t1 {
            return None;
        }
    }
    Some((t0, t1))
}

/// Traverses the block lattice along one ray (3D DDA) and returns the span
/// from the entry of the first allocated block to the exit of the last.
pub fn block_span(grid: &SparseTsdfGrid, origin: &Vec3, dir: &Vec3, t_min: f64, t_max: f64) -> Option<(f64, f64)> {
    let c = grid.config();
    let n = c.blocks_per_axis as i64;
    let side = c.block_size();
    let lo = c.box_origin;
    let hi = lo + Vec3::repeat(c.box_side);
    let (t0, t1) = ray_box(origin, dir, &lo, &hi, t_min, t_max)?;

    let start = (origin + dir * t0 - lo) / side;
    let mut cell = [0i64; 3];
    let mut step = [0i64; 3];
    let mut t_next = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for a in 0..3 {
        cell[a] = (start[a].floor() as i64).clamp(0, n - 1);
        if dir[a] > 0.0 {
            step[a] = 1;
            t_delta[a] = side / dir[a];
            t_next[a] = (lo[a] + (cell[a] + 1) as f64 * side - origin[a]) / dir[a];
        } else if dir[a] < 0.0 {
            step[a] = -1;
            t_delta[a] = -side / dir[a];
            t_next[a] = (lo[a] + cell[a] as f64 * side - origin[a]) / dir[a];
        }
    }

    let mut span: Option<(f64, f64)> = None;
    let mut t_enter = t0;
    loop {
        let axis = if t_next[0] <= t_next[1] && t_next[0] <= t_next[2] {
            0
        } else if t_next[1] <= t_next[2] {
            1
        } else {
            2
        };
        let t_exit = t_next[axis].min(t1);
        if grid.is_allocated([cell[0] as usize, cell[1] as usize, cell[2] as usize]) {
            span = Some(match span {
                None => (t_enter, t_exit),
                Some((a, _)) => (a, t_exit),
            });
        }
        if t_next[axis] >= t1 {
            break;
        }
        cell[axis] += step[axis];
        if cell[axis] < 0 || cell[axis] >= n {
            break;
        }
        t_enter = t_next[axis];
        t_next[axis] += t_delta[axis];
    }
    let pad = PAD * c.box_side;
    span.map(|(a, b)| ((a - pad).max(t0), (b + pad).min(t1)))
}

/// Ray bounds for every pixel of a view. `pose` maps camera to scene.
pub fn compute_ray_bounds(grid: &SparseTsdfGrid, pose: &Pose, intrinsics: &Intrinsics) -> RayBounds {
    let k = *intrinsics;
    let mut intervals = vec![None; k.pixel_count()];
    if grid.allocated_count() > 0 {
        intervals.par_chunks_mut(k.width).enumerate().for_each(|(v, row)| {
            for (u, out) in row.iter_mut().enumerate() {
                let ray = k.ray(u as f64, v as f64);
                let scale = ray.norm();
                let dir = pose.transform_vector(&(ray / scale));
                *out = block_span(grid, &pose.translation, &dir, k.near * scale, k.far * scale);
            }
        });
    }
    RayBounds {
        width: k.width,
        height: k.height,
        intervals,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridConfig, Precision};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> SparseTsdfGrid {
        let c = GridConfig::new(8, 4, Vec3::repeat(-1.0), 2.0).unwrap();
        SparseTsdfGrid::new(c, 64, Precision::Quantized).unwrap()
    }

    #[test]
    fn empty_grid_has_no_intervals() {
        let k = Intrinsics::new(16, 12, 16.0, 16.0, 7.5, 5.5, 0.1, 10.0).unwrap();
        let pose = Pose::from_translation(Vec3::new(0.0, 0.0, -3.0));
        assert_eq!(compute_ray_bounds(&grid(), &pose, &k).nonempty_count(), 0);
    }

    #[test]
    fn single_block_matches_slab_test() {
        let mut g = grid();
        g.allocate_block([3, 5, 4]).unwrap();
        let (lo, hi) = g.config().block_bounds([3, 5, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut hits = 0;
        for _ in 0..2000 {
            let o = Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), -3.0);
            let target = (lo + hi) / 2.0
                + Vec3::new(
                    rng.random_range(-0.2..0.2),
                    rng.random_range(-0.2..0.2),
                    rng.random_range(-0.2..0.2),
                );
            let d = (target - o).normalize();
            let got = block_span(&g, &o, &d, 0.0, 100.0);
            let want = ray_box(&o, &d, &lo, &hi, 0.0, 100.0);
            match (got, want) {
                (Some(a), Some(b)) => {
                    assert!((a.0 - b.0).abs() < 1e-6 && (a.1 - b.1).abs() < 1e-6);
                    hits += 1;
                }
                (None, None) => {}
                // grazing rays through an edge may differ by a hair
                (a, b) => {
                    let (x, y) = a.or(b).unwrap();
                    assert!(y - x < 1e-6, "{a:?} {b:?}");
                }
            }
        }
        assert!(hits > 100);
    }

    #[test]
    fn two_blocks_span_first_entry_to_last_exit() {
        let mut g = grid();
        g.allocate_block([4, 4, 1]).unwrap();
        g.allocate_block([4, 4, 6]).unwrap();
        let o = Vec3::new(0.1, 0.1, -3.0);
        let (a, b) = block_span(&g, &o, &Vec3::z(), 0.0, 100.0).unwrap();
        assert!((a - 2.25).abs() < 1e-6);
        assert!((b - 3.75).abs() < 1e-6);
        // far plane cuts inside the second block
        let (_, b) = block_span(&g, &o, &Vec3::z(), 0.0, 3.6).unwrap();
        assert!((b - 3.6).abs() < 1e-12);
    }

    #[test]
    fn ray_starting_inside_a_block() {
        let mut g = grid();
        g.allocate_block([4, 4, 4]).unwrap();
        let o = Vec3::new(0.1, 0.1, 0.1);
        let (a, b) = block_span(&g, &o, &Vec3::z(), 0.05, 100.0).unwrap();
        assert_eq!(a, 0.05);
        assert!((b - 0.15).abs() < 1e-6);
    }
}
