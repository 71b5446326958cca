mod common;

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use tsdf_fusion::fusion::fuse_frame;
use tsdf_fusion::geometry::{render_synthetic_depth, Primitive};
use tsdf_fusion::render::{
    block_span, compute_ray_bounds, marching_cubes, raycast_with_stats, render_view, sample_tsdf, MarchingCubesParams,
};
use tsdf_fusion::{AnalyticScene, FusionMode, FusionParams, GridConfig, Precision, SparseTsdfGrid, Vec3};

fn fused(scene: &AnalyticScene, config: GridConfig, angles: &[f64]) -> SparseTsdfGrid {
    let mut params = FusionParams::new(FusionMode::Kalman, config.truncation);
    params.sigma0 = 0.0;
    let config = config.with_aux(params.aux_encoding()).unwrap();
    let mut grid = SparseTsdfGrid::new(config, config.block_count(), Precision::Quantized).unwrap();
    let k = camera(160, 120);
    for &a in angles {
        let pose = orbit_pose(a);
        fuse_frame(
            &mut grid,
            &render_synthetic_depth(scene, &pose, &k, None),
            &pose,
            &params,
        )
        .unwrap();
    }
    grid
}

#[test]
fn every_surface_crossing_lies_inside_the_ray_bounds() {
    let config = GridConfig::new(16, 8, Vec3::repeat(-1.0), 2.0).unwrap();
    let grid = fused(&cluster_scene(), config, &[0.0, 60.0, 120.0, 200.0]);
    let h = config.voxel_size();
    let (near, far) = (0.1, 5.0);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut crossings = 0;
    for _ in 0..10_000 {
        let origin = unit(&mut rng) * rng.random_range(0.0..2.0);
        let dir = unit(&mut rng);
        let span = block_span(&grid, &origin, &dir, near, far);
        let mut prev: Option<(f64, f64)> = None;
        let mut t = near;
        while t <= far {
            let s = sample_tsdf(&grid, &(origin + dir * t));
            if let Some(d) = s {
                if let Some((tp, dp)) = prev {
                    if dp.signum() != d.signum() {
                        crossings += 1;
                        let (t0, t1) = span.expect("crossing on a ray without allocated blocks");
                        assert!(
                            tp >= t0 - 1e-9 && t <= t1 + 1e-9,
                            "crossing {tp}..{t} outside {t0}..{t1}"
                        );
                    }
                }
            }
            prev = s.map(|d| (t, d));
            t += 0.25 * h;
        }
    }
    assert!(crossings > 500, "{crossings} crossings");
}

#[test]
fn raycast_work_ignores_empty_space() {
    let scene = AnalyticScene::new(
        vec![Primitive::Sphere {
            center: [0.0, 0.0, 0.0],
            radius: 0.3,
        }],
        2.0,
    );
    let angles = [0.0, 45.0, 90.0];
    // same voxel size and block alignment, eight times the volume
    let small = fused(
        &scene,
        GridConfig::new(16, 8, Vec3::repeat(-1.0), 2.0).unwrap(),
        &angles,
    );
    let large = fused(
        &scene,
        GridConfig::new(32, 8, Vec3::repeat(-2.0), 4.0).unwrap(),
        &angles,
    );
    let k = camera(160, 120);
    let pose = orbit_pose(20.0);
    let per_hit = |g: &SparseTsdfGrid| {
        let (_, _, stats) = raycast_with_stats(g, &pose, &k, &compute_ray_bounds(g, &pose, &k));
        assert!(stats.hits > 1000);
        stats.steps as f64 / stats.hits as f64
    };
    let (a, b) = (per_hit(&small), per_hit(&large));
    assert!((a - b).abs() < 0.1 * a, "steps per hit {a} vs {b}");
}

#[test]
fn raycast_reproduces_a_single_cluster_frame() {
    let config = GridConfig::new(32, 8, Vec3::repeat(-1.0), 2.0).unwrap();
    let grid = fused(&cluster_scene(), config, &[30.0]);
    let k = camera(160, 120);
    let pose = orbit_pose(30.0);
    let input = render_synthetic_depth(&cluster_scene(), &pose, &k, None);
    let (depth, normals) = render_view(&grid, &pose, &k);
    let (mut both, mut close) = (0, 0);
    for v in 0..k.height {
        for u in 0..k.width {
            if let (Some(a), Some(b)) = (depth.depth_at(u, v), input.depth_at(u, v)) {
                both += 1;
                close += usize::from((a - b).abs() <= config.voxel_size());
                if let Some(n) = normals.at(u, v) {
                    assert!((n.norm() - 1.0).abs() < 1e-6);
                }
            }
        }
    }
    assert!(both > 3000 && close as f64 >= 0.95 * both as f64, "{close}/{both}");
}

#[test]
fn cluster_mesh_is_closed_away_from_unobserved_space() {
    let config = GridConfig::new(16, 8, Vec3::repeat(-1.0), 2.0).unwrap();
    let angles: Vec<f64> = (0..12).map(|i| 30.0 * i as f64).collect();
    let grid = fused(&cluster_scene(), config, &angles);
    let mesh = marching_cubes(&grid, None, &MarchingCubesParams::default());
    mesh.validate().unwrap();
    let mut edges: HashMap<(u32, u32), usize> = HashMap::new();
    for t in &mesh.triangles {
        for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            *edges.entry((a.min(b), a.max(b))).or_default() += 1;
        }
    }
    let h = config.voxel_size();
    let near_chi = |p: &Vec3| {
        let base = ((p - config.box_origin) / h).map(|x| (x - 0.5).floor() as i64);
        (-1..=2).any(|dz| {
            (-1..=2).any(|dy| (-1..=2).any(|dx| grid.tsdf_at(base.x + dx, base.y + dy, base.z + dz).is_none()))
        })
    };
    let mut open = 0;
    for (&(a, b), &n) in &edges {
        if n != 2 {
            open += 1;
            let (pa, pb) = (mesh.vertices[a as usize], mesh.vertices[b as usize]);
            assert!(near_chi(&pa) || near_chi(&pb), "open interior edge at {pa:?}");
        }
    }
    // the undersides are never observed, so some boundary remains
    assert!(open * 10 < edges.len(), "{open} open of {}", edges.len());
}

fn unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}
