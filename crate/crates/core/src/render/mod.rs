//! Scene rendering: bounded raycasting into depth and normal maps, sparse
//! marching cubes, and mesh/depth export.

mod bounds;
mod io;
mod marching_cubes;
mod raycast;
mod sample;
pub mod tables;

pub use bounds::{block_span, compute_ray_bounds, ray_box, RayBounds};
pub use io::{read_ply, write_pfm, write_ply};
pub use marching_cubes::{marching_cubes, MarchingCubesParams, ViewRegion};
pub use raycast::{raycast, raycast_with_stats, render_view, RaycastStats};
pub use sample::{sample_gradient, sample_tsdf};

use crate::Vec3;

/// Indexed triangle mesh with unit vertex normals.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

impl Mesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i as usize]);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Checks index ranges, unit normals and triangle areas.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.normals.len() != self.vertices.len() {
            return Err("normal count differs from vertex count".into());
        }
        if let Some(n) = self.normals.iter().find(|n| (n.norm() - 1.0).abs() > 1e-6) {
            return Err(format!("normal {n:?} is not unit length"));
        }
        for (i, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&k| k as usize >= self.vertices.len()) {
                return Err(format!("triangle {i} indexes past the vertex list"));
            }
            if self.triangle_area(i) <= 1e-12 {
                return Err(format!("triangle {i} is degenerate"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{fuse_frame, FusionMode, FusionParams};
    use crate::geometry::{render_synthetic_depth, AnalyticScene, Intrinsics, Pose, Primitive};
    use crate::grid::{GridConfig, Precision, SparseTsdfGrid};
    use std::collections::HashMap;

    fn sphere_grid(views: usize) -> (SparseTsdfGrid, AnalyticScene) {
        let scene = AnalyticScene::new(
            vec![Primitive::Sphere {
                center: [0.0, 0.0, 0.0],
                radius: 0.5,
            }],
            2.0,
        );
        let c = GridConfig::new(16, 8, Vec3::repeat(-1.0), 2.0).unwrap();
        let params = FusionParams::new(FusionMode::Weighted, c.truncation);
        let c = c.with_aux(params.aux_encoding()).unwrap();
        let mut grid = SparseTsdfGrid::new(c, 4096, Precision::Quantized).unwrap();
        let k = Intrinsics::new(256, 192, 220.0, 220.0, 127.5, 95.5, 0.1, 5.0).unwrap();
        for i in 0..views {
            let a = i as f64 / views as f64 * std::f64::consts::TAU;
            let eye = Vec3::new(1.8 * a.cos(), 1.8 * a.sin(), if i % 2 == 0 { 0.9 } else { -0.9 });
            let pose = Pose::look_at(eye, Vec3::zeros(), Vec3::z());
            let frame = render_synthetic_depth(&scene, &pose, &k, None);
            fuse_frame(&mut grid, &frame, &pose, &params).unwrap();
        }
        (grid, scene)
    }

    #[test]
    fn empty_grid_gives_empty_mesh() {
        let c = GridConfig::new(4, 4, Vec3::zeros(), 1.0).unwrap();
        let g = SparseTsdfGrid::new(c, 8, Precision::Quantized).unwrap();
        assert!(marching_cubes(&g, None, &MarchingCubesParams::default()).is_empty());
    }

    #[test]
    fn single_negative_corner_is_one_triangle() {
        let c = GridConfig::new(1, 2, Vec3::zeros(), 1.0).unwrap();
        let mut g = SparseTsdfGrid::new(c, 1, Precision::Float).unwrap();
        g.allocate_block([0, 0, 0]).unwrap();
        for z in 0..2 {
            for y in 0..2 {
                for x in 0..2 {
                    let v = if (x, y, z) == (0, 0, 0) { -0.2 } else { 0.3 };
                    g.write_voxel([x, y, z], Some(v * c.truncation), 0.0).unwrap();
                }
            }
        }
        let mesh = marching_cubes(&g, None, &MarchingCubesParams::default());
        assert_eq!(mesh.triangles.len(), 1);
        assert_eq!(mesh.vertices.len(), 3);
        mesh.validate().unwrap();
        // outward (towards positive values) winding
        let [a, b, cc] = mesh.triangles[0].map(|i| mesh.vertices[i as usize]);
        let face = (b - a).cross(&(cc - a));
        assert!(face.dot(&Vec3::repeat(1.0)) > 0.0);
    }

    #[test]
    fn sphere_mesh_is_close_and_closed() {
        let (grid, scene) = sphere_grid(8);
        let mesh = marching_cubes(&grid, None, &MarchingCubesParams::default());
        mesh.validate().unwrap();
        let voxel = grid.config().voxel_size();
        let errors: Vec<f64> = mesh.vertices.iter().map(|v| scene.distance(v).abs()).collect();
        let rms = (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt();
        let max = errors.iter().cloned().fold(0.0, f64::max);
        assert!(rms <= 0.25 * voxel, "rms {rms}");
        assert!(max <= voxel, "max {max}");
        // projective distances skew gradients where every view is grazing
        let aligned = mesh
            .vertices
            .iter()
            .zip(&mesh.normals)
            .filter(|(v, n)| n.dot(&v.normalize()) > 0.9)
            .count();
        assert!(
            aligned as f64 >= 0.98 * mesh.vertices.len() as f64,
            "{aligned}/{}",
            mesh.vertices.len()
        );
        // every edge shared by exactly two triangles
        let mut edges: HashMap<(u32, u32), usize> = HashMap::new();
        for t in &mesh.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        // edges may only be open where a neighboring cube touches χ
        let c = grid.config();
        let near_chi = |p: &Vec3| {
            let u = (p - c.box_origin) / voxel - Vec3::repeat(0.5);
            let b = u.map(|x| x.floor() as i64);
            (-1..=2)
                .any(|dz| (-1..=2).any(|dy| (-1..=2).any(|dx| grid.tsdf_at(b.x + dx, b.y + dy, b.z + dz).is_none())))
        };
        let mut open = 0;
        for (&(a, b), &count) in &edges {
            if count != 2 {
                open += 1;
                assert!(near_chi(&mesh.vertices[a as usize]) || near_chi(&mesh.vertices[b as usize]));
            }
        }
        assert!(open * 50 < edges.len(), "{open} open edges of {}", edges.len());
    }

    #[test]
    fn batching_changes_only_vertex_sharing() {
        let (grid, _) = sphere_grid(4);
        let one = marching_cubes(&grid, None, &MarchingCubesParams::default());
        let many = marching_cubes(&grid, None, &MarchingCubesParams { batch_triangles: 500 });
        assert_eq!(one.triangles.len(), many.triangles.len());
        assert!(many.vertices.len() >= one.vertices.len());
        let tri = |m: &Mesh, i: usize| m.triangles[i].map(|k| m.vertices[k as usize]);
        for i in 0..one.triangles.len() {
            assert_eq!(tri(&one, i), tri(&many, i));
        }
    }

    #[test]
    fn frustum_region_limits_extraction() {
        let (grid, _) = sphere_grid(4);
        let k = Intrinsics::new(64, 48, 200.0, 200.0, 31.5, 23.5, 0.1, 5.0).unwrap();
        let pose = Pose::look_at(Vec3::new(0.0, -2.0, 0.0), Vec3::new(0.5, 0.0, 0.0), Vec3::z());
        let all = marching_cubes(&grid, None, &MarchingCubesParams::default());
        let part = marching_cubes(
            &grid,
            Some(ViewRegion {
                pose: &pose,
                intrinsics: &k,
            }),
            &MarchingCubesParams::default(),
        );
        assert!(!part.is_empty());
        assert!(part.triangles.len() < all.triangles.len());
    }

    #[test]
    fn ply_round_trip_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.ply");
        write_ply(&Mesh::default(), &empty).unwrap();
        assert_eq!(read_ply(&empty).unwrap(), Mesh::default());

        let mesh = Mesh {
            vertices: vec![Vec3::zeros(), Vec3::x(), Vec3::y()],
            normals: vec![Vec3::z(); 3],
            triangles: vec![[0, 1, 2]],
        };
        let (a, b) = (dir.path().join("a.ply"), dir.path().join("b.ply"));
        write_ply(&mesh, &a).unwrap();
        write_ply(&mesh, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(read_ply(&a).unwrap(), mesh);
        assert!(read_ply(&dir.path().join("missing.ply")).is_err());
    }

    #[test]
    fn pfm_layout() {
        let k = Intrinsics::new(3, 2, 1.0, 1.0, 1.0, 0.5, 0.1, 5.0).unwrap();
        let f = crate::geometry::DepthFrame::new(k, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.pfm");
        write_pfm(&f, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let header = b"Pf\n3 2\n-1.0\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len(), header.len() + 24);
        assert_eq!(
            f32::from_le_bytes(bytes[header.len()..header.len() + 4].try_into().unwrap()),
            4.0
        );
    }
}
