use std::collections::HashMap;

use rayon::prelude::*;

use crate::geometry::{Intrinsics, Pose};
use crate::grid::{BlockCoord, SparseTsdfGrid};
use crate::Vec3;

use super::sample::sample_gradient;
use super::tables::{CORNER_OFFSETS, EDGE_CORNERS, EDGE_TABLE, TRI_TABLE};
use super::Mesh;

/// Triangles smaller than this area are dropped, m².
const MIN_TRIANGLE_AREA: f64 = 1e-12;

/// Extraction settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MarchingCubesParams {
    /// Upper bound on the triangles emitted per batch; a batch holds whole
    /// blocks, so one oversized block still forms its own batch.
    pub batch_triangles: usize,
}

impl Default for MarchingCubesParams {
    fn default() -> Self {
        Self {
            batch_triangles: 1 << 20,
        }
    }
}

/// View restricting extraction to blocks in a frustum.
#[derive(Debug, Clone, Copy)]
pub struct ViewRegion<'a> {
    pub pose: &'a Pose,
    pub intrinsics: &'a Intrinsics,
}

/// One triangle before welding: three (edge key, position, normal) corners.
type RawTriangle = [(u64, Vec3, Vec3); 3];

/// Extracts the zero level set of the TSDF.
///
/// Runs in three passes over the selected blocks: triangles are counted per
/// block, the counts are prefix-summed and split into batches under the
/// triangle budget, and each batch is emitted in parallel per block and
/// merged in block order. Vertices on the same grid edge are shared within a
/// batch.
pub fn marching_cubes(grid: &SparseTsdfGrid, region: Option<ViewRegion<'_>>, params: &MarchingCubesParams) -> Mesh {
    let blocks: Vec<BlockCoord> = match region {
        Some(r) => grid.occupied_blocks_in_frustum(r.pose, r.intrinsics, r.intrinsics.near, r.intrinsics.far),
        None => grid.allocated_blocks(),
    };

    let counts: Vec<usize> = blocks
        .par_iter()
        .map(|&b| {
            let mut n = 0;
            for_each_cube(grid, b, |_, _, case| n += triangle_count(case));
            n
        })
        .collect();

    let mut offsets = Vec::with_capacity(counts.len() + 1);
    offsets.push(0usize);
    for c in &counts {
        offsets.push(offsets.last().unwrap() + c);
    }

    let mut batches: Vec<std::ops::Range<usize>> = Vec::new();
    let mut start = 0;
    for i in 0..blocks.len() {
        if i > start && offsets[i + 1] - offsets[start] > params.batch_triangles.max(1) {
            batches.push(start..i);
            start = i;
        }
    }
    if start < blocks.len() {
        batches.push(start..blocks.len());
    }

    let mut mesh = Mesh::default();
    for range in batches {
        let raw: Vec<Vec<RawTriangle>> = blocks[range].par_iter().map(|&b| emit_block(grid, b)).collect();
        let mut index: HashMap<u64, u32> = HashMap::new();
        for tri in raw.iter().flatten() {
            let (a, b, c) = (tri[0].1, tri[1].1, tri[2].1);
            if 0.5 * (b - a).cross(&(c - a)).norm() < MIN_TRIANGLE_AREA {
                continue;
            }
            let mut ids = [0u32; 3];
            for (slot, &(key, p, n)) in ids.iter_mut().zip(tri) {
                *slot = *index.entry(key).or_insert_with(|| {
                    mesh.vertices.push(p);
                    mesh.normals.push(n);
                    (mesh.vertices.len() - 1) as u32
                });
            }
            if ids[0] != ids[1] && ids[1] != ids[2] && ids[0] != ids[2] {
                mesh.triangles.push(ids);
            }
        }
    }
    mesh
}

#[inline]
fn triangle_count(case: usize) -> usize {
    TRI_TABLE[case].iter().take_while(|&&e| e >= 0).count() / 3
}

/// Calls `f(cube_origin, corner_values, case)` for every cube whose lower
/// corner lies in block `b`, whose corners are all non-χ and which the
/// surface crosses.
fn for_each_cube(grid: &SparseTsdfGrid, b: BlockCoord, mut f: impl FnMut([i64; 3], &[f64; 8], usize)) {
    let m = grid.config().voxels_per_block_axis as i64;
    let base = [b[0] as i64 * m, b[1] as i64 * m, b[2] as i64 * m];
    let mut values = [0f64; 8];
    for z in base[2]..base[2] + m {
        for y in base[1]..base[1] + m {
            'cube: for x in base[0]..base[0] + m {
                let mut case = 0usize;
                for (i, o) in CORNER_OFFSETS.iter().enumerate() {
                    match grid.tsdf_at(x + o[0] as i64, y + o[1] as i64, z + o[2] as i64) {
                        Some(v) => values[i] = v,
                        None => continue 'cube,
                    }
                    if values[i] < 0.0 {
                        case |= 1 << i;
                    }
                }
                if EDGE_TABLE[case] != 0 {
                    f([x, y, z], &values, case);
                }
            }
        }
    }
}

fn emit_block(grid: &SparseTsdfGrid, b: BlockCoord) -> Vec<RawTriangle> {
    let c = grid.config();
    let r = c.resolution() as u64;
    let mut out = Vec::new();
    for_each_cube(grid, b, |origin, values, case| {
        let mut edge_vertex = [(0u64, Vec3::zeros(), Vec3::zeros()); 12];
        for (e, &[ca, cb]) in EDGE_CORNERS.iter().enumerate() {
            if EDGE_TABLE[case] & (1 << e) == 0 {
                continue;
            }
            let (oa, ob) = (CORNER_OFFSETS[ca], CORNER_OFFSETS[cb]);
            let va = [
                origin[0] as usize + oa[0],
                origin[1] as usize + oa[1],
                origin[2] as usize + oa[2],
            ];
            let vb = [
                origin[0] as usize + ob[0],
                origin[1] as usize + ob[1],
                origin[2] as usize + ob[2],
            ];
            // interpolate from the lower grid corner so that cubes sharing
            // the edge compute bit-identical positions
            let (va, vb, fa, fb) = if va <= vb {
                (va, vb, values[ca], values[cb])
            } else {
                (vb, va, values[cb], values[ca])
            };
            let t = fa / (fa - fb);
            let (pa, pb) = (c.voxel_center(va), c.voxel_center(vb));
            let p = pa + (pb - pa) * t;
            let linear = |v: [usize; 3]| (v[2] as u64 * r + v[1] as u64) * r + v[0] as u64;
            let axis = (0..3).find(|&a| va[a] != vb[a]).unwrap() as u64;
            // a crossing exactly on a grid corner is shared by every edge
            // meeting there, so it is keyed by the corner
            let key = if t <= 0.0 {
                3 * r * r * r + linear(va)
            } else if t >= 1.0 {
                3 * r * r * r + linear(vb)
            } else {
                linear(va) * 3 + axis
            };
            let n = sample_gradient(grid, &p).filter(|g| g.norm() > 0.0).unwrap_or_else(|| {
                let corner = c.voxel_center([origin[0] as usize, origin[1] as usize, origin[2] as usize]);
                cube_gradient(values, &((p - corner) / c.voxel_size()))
            });
            let n = if n.norm() > 0.0 { n.normalize() } else { Vec3::z() };
            edge_vertex[e] = (key, p, n);
        }
        for tri in TRI_TABLE[case].chunks(3) {
            if tri[0] < 0 {
                break;
            }
            // the table winds triangles around the inside; reverse so that
            // faces are counter-clockwise seen from outside
            out.push([
                edge_vertex[tri[0] as usize],
                edge_vertex[tri[2] as usize],
                edge_vertex[tri[1] as usize],
            ]);
        }
    });
    out
}

/// Gradient of the trilinear interpolant inside one cube at local position
/// `f ∈ [0,1]³`, in units of the corner values per voxel.
fn cube_gradient(values: &[f64; 8], f: &Vec3) -> Vec3 {
    let mut g = Vec3::zeros();
    for (i, o) in CORNER_OFFSETS.iter().enumerate() {
        let w = |a: usize| if o[a] == 1 { f[a] } else { 1.0 - f[a] };
        let s = |a: usize| if o[a] == 1 { 1.0 } else { -1.0 };
        g.x += values[i] * s(0) * w(1) * w(2);
        g.y += values[i] * w(0) * s(1) * w(2);
        g.z += values[i] * w(0) * w(1) * s(2);
    }
    g
}
