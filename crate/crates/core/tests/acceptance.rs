//! End-to-end acceptance checks. Each test prints one PASS/FAIL line and then
//! asserts the same condition.

mod common;

use std::sync::OnceLock;

use nalgebra::{Matrix6, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use tsdf_fusion::fusion::fuse_frame;
use tsdf_fusion::geometry::{compute_normals, render_synthetic_depth, NoiseModel, Primitive};
use tsdf_fusion::grid::FloatShadowGrid;
use tsdf_fusion::pipeline::{experiment_filters, run, MeshError, RunOutput, RunStatus, Scenario, TrackingMode};
use tsdf_fusion::registration::{
    assemble, icp, match_points, shrink, solve_direct, solve_gated, unshrink, MatchParams, PointMatch,
};
use tsdf_fusion::render::render_view;
use tsdf_fusion::{AnalyticScene, FusionMode, FusionParams, GridConfig, Pose, Precision, SparseTsdfGrid, Vec3};

#[test]
fn c01_sparse_fusion_matches_dense_reference() {
    let k = camera(160, 120);
    let scene = cluster_scene();
    let mut compared = 0usize;
    let mut mismatches = 0usize;
    let mut observed = 0usize;
    for mode in [FusionMode::Simple, FusionMode::Weighted, FusionMode::Kalman] {
        for seed in 1..=3u64 {
            let geometry = GridConfig::new(8, 8, Vec3::repeat(-1.0), 2.0).unwrap();
            let mut params = FusionParams::new(mode, geometry.truncation);
            params.sigma0 = 0.5 * geometry.voxel_size() / (1.5 * 1.5);
            let config = geometry.with_aux(params.aux_encoding()).unwrap();
            let mut sparse = SparseTsdfGrid::new(config, config.block_count(), Precision::Float).unwrap();
            let mut dense = DenseFusion::new(FloatShadowGrid::new(config).unwrap(), params);
            let start = 37.0 * seed as f64;
            for f in 0..5 {
                let pose = orbit_pose(start + 12.0 * f as f64);
                let noise = NoiseModel {
                    sigma0: params.sigma0,
                    seed: seed * 100 + f,
                };
                let frame = render_synthetic_depth(&scene, &pose, &k, Some(noise));
                fuse_frame(&mut sparse, &frame, &pose, &params).unwrap();
                dense.fuse(&frame, &pose);
            }
            let r = config.resolution();
            for z in 0..r {
                for y in 0..r {
                    for x in 0..r {
                        let a = sparse.read_voxel([x as i64, y as i64, z as i64]).unwrap();
                        let b = dense.grid.get([x, y, z]);
                        compared += 1;
                        observed += usize::from(b.tsdf.is_some());
                        if a != b {
                            mismatches += 1;
                        }
                    }
                }
            }
        }
    }
    let pass = mismatches == 0 && observed > 10_000;
    report(
        "c01 sparse/dense equivalence",
        pass,
        &format!("{mismatches} mismatching of {compared} voxels ({observed} observed), 3 modes x 3 seeds x 5 frames"),
    );
    assert!(pass);
}

#[test]
fn c02_memory_formula_is_exact_every_frame() {
    let mut failures = Vec::new();
    let mut frames = 0;
    for (n, m) in [(8usize, 8usize), (16, 8), (16, 16)] {
        let mut c = cluster_config();
        c.tracking = TrackingMode::GroundTruth;
        c.grid.blocks_per_axis = n;
        c.grid.voxels_per_block_axis = m;
        c.grid.pool_capacity = Some(n * n * n);
        let out = run(&c).unwrap();
        assert!(matches!(out.status, RunStatus::Completed));
        let rows = &out.metrics.rows;
        assert_eq!(rows.len(), 20);
        for row in rows {
            frames += 1;
            let expected = 2 * row.fusion.blocks_total as u64 * (m * m * m) as u64 + 4 * (n * n * n) as u64;
            if row.fusion.memory_bytes != expected {
                failures.push(format!(
                    "{n}x{m} frame {}: {} != {expected}",
                    row.frame, row.fusion.memory_bytes
                ));
            }
        }
        let last = rows.last().unwrap();
        if out.grid.allocated_count() != last.fusion.blocks_total || out.grid.memory_bytes() != last.fusion.memory_bytes
        {
            failures.push(format!("{n}x{m}: final grid disagrees with last row"));
        }
    }
    let pass = failures.is_empty();
    report(
        "c02 memory formula",
        pass,
        &format!(
            "{frames} frames over 3 layouts, {} violations {:?}",
            failures.len(),
            failures
        ),
    );
    assert!(pass);
}

#[test]
fn c03_averaging_reduces_deviation_by_sqrt_n() {
    // Fronto-parallel plane 1.5 m in front of the camera; every voxel sees
    // the bilinear blend of four independent pixels, whose deviation is
    // known from the sub-pixel position.
    const N: usize = 100;
    let k = camera(160, 120);
    let eye = Vec3::new(0.0, 0.0, -1.5);
    let pose = Pose::look_at(eye, Vec3::zeros(), Vec3::y());
    let scene = AnalyticScene::new(
        vec![Primitive::Plane {
            point: [0.0, 0.0, 0.0],
            normal: [0.0, 0.0, -1.0],
        }],
        2.0,
    );
    let config = GridConfig::new(16, 8, Vec3::repeat(-1.0), 2.0).unwrap();
    let h = config.voxel_size();
    let sigma_pixel = 0.5 * h;
    let sigma0 = sigma_pixel / (1.5 * 1.5);
    let mut params = FusionParams::new(FusionMode::Simple, config.truncation);
    params.edge_weighting = false;
    let mut grid = SparseTsdfGrid::new(config, config.block_count(), Precision::Float).unwrap();
    for i in 0..N {
        let frame = render_synthetic_depth(
            &scene,
            &pose,
            &k,
            Some(NoiseModel {
                sigma0,
                seed: 9000 + i as u64,
            }),
        );
        // weight 1/(i+1) makes the simple update the running mean
        params.w_fixed = if i == 0 { 0.5 } else { 1.0 / (i + 1) as f64 };
        fuse_frame(&mut grid, &frame, &pose, &params).unwrap();
    }

    let to_camera = pose.inverse();
    let r = config.resolution();
    let (mut sum, mut sum2, mut count) = (0.0, 0.0, 0usize);
    for z in 0..r {
        for y in 0..r {
            for x in 0..r {
                let c = config.voxel_center([x, y, z]);
                let truth = -c.z;
                if truth.abs() > 2.0 * h {
                    continue;
                }
                let p = to_camera.transform_point(&c);
                let Some((u, v, _)) = k.project(&p) else { continue };
                // interior only, so that all four neighbors exist
                if u < 2.0 || v < 2.0 || u > k.width as f64 - 3.0 || v > k.height as f64 - 3.0 {
                    continue;
                }
                let Some(t) = grid.read_voxel([x as i64, y as i64, z as i64]).unwrap().tsdf else {
                    continue;
                };
                let (a, b) = (u - u.floor(), v - v.floor());
                let blend = ((a * a + (1.0 - a) * (1.0 - a)) * (b * b + (1.0 - b) * (1.0 - b))).sqrt();
                let sigma_voxel = sigma_pixel * blend;
                let e = (t - truth) / (sigma_voxel / (N as f64).sqrt());
                sum += e;
                sum2 += e * e;
                count += 1;
            }
        }
    }
    let mean = sum / count as f64;
    let std = (sum2 / count as f64 - mean * mean).sqrt();
    let pass = count >= 1000 && (std - 1.0).abs() <= 0.2;
    report(
        "c03 sqrt-N averaging",
        pass,
        &format!("std / (sigma/sqrt(100)) = {std:.3} (mean {mean:.3}) over {count} shell voxels; bound 1 +- 0.2"),
    );
    assert!(pass);
}

#[test]
fn c04_kalman_beats_fixed_weight_under_ramping_noise() {
    let c = cluster_config();
    let f = &c.filters;
    let exp = experiment_filters(f, c.seed).unwrap();
    let traces: Vec<_> = exp.traces.iter().filter(|t| t.scenario == Scenario::Ramp).collect();
    let wins = traces
        .iter()
        .filter(|t| {
            let e = t.tail_error(f.tail_fraction);
            e[2] <= e[0]
        })
        .count();
    let pass = traces.len() == 30 && wins * 10 >= traces.len() * 8;
    report(
        "c04 kalman vs fixed weight",
        pass,
        &format!(
            "kalman tail error <= fixed-weight in {wins}/{} trials; bound 80%",
            traces.len()
        ),
    );
    assert!(pass);
}

#[test]
fn c05_icp_recovers_two_degrees_and_three_voxels() {
    let k = camera(320, 240);
    let scene = cluster_scene();
    let h = 2.0 / 256.0;
    let params = MatchParams::for_voxel_size(h);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ok = 0;
    let mut worst = (0.0f64, 0.0f64, 0usize);
    for trial in 0..10 {
        let target_pose = orbit_pose(36.0 * trial as f64);
        let axis = random_unit(&mut rng);
        let dir = random_unit(&mut rng);
        let truth = Pose::from_axis_angle(axis, 2f64.to_radians(), dir * 3.0 * h);
        let source_pose = target_pose.compose(&truth);
        let target = render_synthetic_depth(&scene, &target_pose, &k, None);
        let source = render_synthetic_depth(&scene, &source_pose, &k, None);
        let (tn, sn) = (compute_normals(&target, h), compute_normals(&source, h));
        let result = icp(&source, &sn, &target, &tn, &Pose::identity(), &params).unwrap();
        let rot = truth.rotation_angle_to(&result.delta).to_degrees();
        let trans = truth.translation_distance_to(&result.delta) / h;
        worst = (worst.0.max(rot), worst.1.max(trans), worst.2.max(result.iterations));
        if rot <= 0.1 && trans <= 0.1 && result.iterations <= 15 {
            ok += 1;
        }
    }
    let pass = ok == 10;
    report(
        "c05 icp recovery",
        pass,
        &format!(
            "{ok}/10 trials; worst {:.4} deg, {:.4} voxel, {} iterations",
            worst.0, worst.1, worst.2
        ),
    );
    assert!(pass);
}

#[test]
fn c06_eigenvalue_gating() {
    let k = camera(320, 240);
    let h = 2.0 / 256.0;
    let params = MatchParams::for_voxel_size(h);

    // plane facing the camera: in-plane translation and rotation about the
    // normal are unobservable
    let plane = AnalyticScene::new(
        vec![Primitive::Plane {
            point: [0.0, 0.0, 0.0],
            normal: [0.0, 0.0, -1.0],
        }],
        2.0,
    );
    let target_pose = Pose::look_at(Vec3::new(0.0, 0.0, -1.5), Vec3::zeros(), Vec3::y());
    let offset = Pose::from_axis_angle(
        Vec3::new(0.3, -0.2, 1.0).normalize(),
        0.5f64.to_radians(),
        Vec3::new(0.01, -0.02, 0.01),
    );
    let source_pose = target_pose.compose(&offset);
    let target = render_synthetic_depth(&plane, &target_pose, &k, None);
    let source = render_synthetic_depth(&plane, &source_pose, &k, None);
    let matches = match_points(
        &source,
        &compute_normals(&source, h),
        &target,
        &compute_normals(&target, h),
        &Pose::identity(),
        &params,
    );
    let (s, f) = shrink(&matches, params.min_extent).unwrap();
    let sol = solve_gated(&assemble(&s, &f), 0.005);
    let gated: Vec<usize> = (0..6).filter(|&i| !sol.kept[i]).collect();
    let mut leak = 0.0f64;
    let mut in_plane = true;
    for &i in &gated {
        let v = sol.eigenvectors.column(i);
        leak = leak.max(v.dot(&sol.shrunk).abs());
        // camera z is the plane normal: rz, tx, ty span the null space
        in_plane &= (v[2] * v[2] + v[3] * v[3] + v[4] * v[4]).sqrt() > 0.999;
    }
    let plane_ok = gated.len() == 3 && in_plane && leak <= 1e-8;

    // full-rank scene: nothing gated and the gated solve is the direct solve
    let scene = cluster_scene();
    let target_pose = orbit_pose(20.0);
    let source_pose = target_pose.compose(&offset);
    let target = render_synthetic_depth(&scene, &target_pose, &k, None);
    let source = render_synthetic_depth(&scene, &source_pose, &k, None);
    let matches = match_points(
        &source,
        &compute_normals(&source, h),
        &target,
        &compute_normals(&target, h),
        &Pose::identity(),
        &params,
    );
    let (s, f) = shrink(&matches, params.min_extent).unwrap();
    let eq = assemble(&s, &f);
    let full = solve_gated(&eq, 0.005);
    let direct = solve_direct(&eq).unwrap();
    let rel = (full.shrunk - direct).norm() / direct.norm();
    let full_ok = full.kept.iter().all(|&k| k) && rel <= 1e-8;

    let pass = plane_ok && full_ok;
    report(
        "c06 eigenvalue gating",
        pass,
        &format!(
            "plane: {} gated, in-plane {in_plane}, leak {leak:.2e}; full rank: kept {}, relative difference {rel:.2e}",
            gated.len(),
            full.kept_mask_bits()
        ),
    );
    assert!(pass);
}

#[test]
fn c07_shrunk_solve_equals_plain_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(50..400);
        let center = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(0.5..3.0),
        );
        let extent = Vec3::new(
            rng.random_range(0.05..1.0),
            rng.random_range(0.05..1.0),
            rng.random_range(0.05..1.0),
        );
        let matches: Vec<PointMatch> = (0..n)
            .map(|_| {
                let q = center
                    + Vec3::new(
                        rng.random_range(-0.5..0.5) * extent.x,
                        rng.random_range(-0.5..0.5) * extent.y,
                        rng.random_range(-0.5..0.5) * extent.z,
                    );
                let n = random_unit(&mut rng);
                let p = q + n * rng.random_range(-0.01..0.01) + random_unit(&mut rng) * 0.002;
                PointMatch { p, q, n }
            })
            .collect();
        // plain normal equation in scene units
        let mut a = Matrix6::zeros();
        let mut b = Vector6::zeros();
        for m in &matches {
            let c = m.p.cross(&m.n);
            let g = Vector6::new(c.x, c.y, c.z, m.n.x, m.n.y, m.n.z);
            let r = (m.p - m.q).dot(&m.n);
            a += g * g.transpose();
            b -= g * r;
        }
        let plain = a.lu().solve(&b).unwrap();
        let (s, f) = shrink(&matches, 1e-3).unwrap();
        let shrunk = solve_direct(&assemble(&s, &f)).unwrap();
        let back = Vector6::from_row_slice(&unshrink(&shrunk, &f).to_array());
        worst = worst.max((plain - back).norm() / plain.norm());
    }
    let pass = worst <= 1e-6;
    report(
        "c07 shrink equivalence",
        pass,
        &format!("worst relative difference {worst:.2e} over 100 sets; bound 1e-6"),
    );
    assert!(pass);
}

fn ground_truth_run() -> &'static RunOutput {
    static RUN: OnceLock<RunOutput> = OnceLock::new();
    RUN.get_or_init(|| {
        let mut c = cluster_config();
        c.tracking = TrackingMode::GroundTruth;
        run(&c).unwrap()
    })
}

#[test]
fn c08_ground_truth_orbit_mesh_fidelity() {
    let out = ground_truth_run();
    let h = out.grid.config().voxel_size();
    let e = MeshError::measure(&out.mesh, &cluster_scene()).unwrap();
    let (rms, max) = (e.rms / h, e.max / h);
    let pass = matches!(out.status, RunStatus::Completed) && rms <= 0.25 && max <= 1.0;
    report(
        "c08 reconstruction fidelity",
        pass,
        &format!(
            "vertex rms {rms:.3} voxel (<= 0.25), max {max:.3} voxel (<= 1), {} vertices",
            out.mesh.vertices.len()
        ),
    );
    assert!(pass);
}

#[test]
fn c09_raycast_agrees_with_rasterized_mesh() {
    let out = ground_truth_run();
    let h = out.grid.config().voxel_size();
    let k = camera(320, 240);
    let (mut both, mut close) = (0usize, 0usize);
    for angle in [0.0, 25.0, 50.0, 76.0, 130.0, 250.0] {
        let pose = orbit_pose(angle);
        let (ray, _) = render_view(&out.grid, &pose, &k);
        let mesh = rasterize(&out.mesh, &pose, &k);
        for v in 0..k.height {
            for u in 0..k.width {
                if let (Some(a), Some(b)) = (ray.depth_at(u, v), mesh[v * k.width + u]) {
                    both += 1;
                    close += usize::from((a - b).abs() <= h);
                }
            }
        }
    }
    let share = close as f64 / both as f64;
    let pass = both > 10_000 && share >= 0.95;
    report(
        "c09 render consistency",
        pass,
        &format!(
            "{:.2}% of {both} mutually valid pixels within 1 voxel; bound 95%",
            100.0 * share
        ),
    );
    assert!(pass);
}

#[test]
fn c10_icp_tracking_with_noise() {
    let mut c = cluster_config();
    c.tracking = TrackingMode::Icp;
    let h = c.grid.box_side / (c.grid.blocks_per_axis * c.grid.voxels_per_block_axis) as f64;
    // deviation of half a voxel at the orbit distance
    c.noise.sigma0 = 0.5 * h / (1.5 * 1.5);
    c.validate().unwrap();
    let out = run(&c).unwrap();
    let completed = matches!(out.status, RunStatus::Completed);
    let e = MeshError::measure(&out.mesh, &cluster_scene()).unwrap();
    let rms = e.rms / h;
    let last = out.metrics.rows.last().unwrap();
    let pass = completed && out.metrics.rows.len() == 20 && rms <= 0.5;
    report(
        "c10 end-to-end tracking",
        pass,
        &format!(
            "completed {completed}, mesh rms {rms:.3} voxel (<= 0.5), final pose error {:.4} deg / {:.3} voxel",
            last.pose_error.map_or(f64::NAN, |p| p.0),
            last.pose_error.map_or(f64::NAN, |p| p.1 / h)
        ),
    );
    assert!(pass);
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
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
