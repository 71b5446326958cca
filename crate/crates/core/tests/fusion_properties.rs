mod common;

use proptest::prelude::*;

use common::*;
use tsdf_fusion::fusion::fuse_frame;
use tsdf_fusion::geometry::{render_synthetic_depth, NoiseModel, Primitive};
use tsdf_fusion::{AnalyticScene, FusionMode, FusionParams, GridConfig, Pose, Precision, SparseTsdfGrid, Vec3};

fn plane_scene() -> AnalyticScene {
    AnalyticScene::new(
        vec![Primitive::Plane {
            point: [0.0, 0.0, 0.0],
            normal: [0.0, 0.0, -1.0],
        }],
        2.0,
    )
}

/// Mean squared distance error over the voxels within two voxels of the
/// plane `z = 0` after fusing `frames` noisy views.
fn plane_mse(mode: FusionMode, frames: u64, seed: u64) -> f64 {
    let config = GridConfig::new(16, 8, Vec3::repeat(-1.0), 2.0).unwrap();
    let h = config.voxel_size();
    let mut params = FusionParams::new(mode, config.truncation);
    params.edge_weighting = false;
    let sigma0 = 0.5 * h / (1.5 * 1.5);
    let config = config.with_aux(params.aux_encoding()).unwrap();
    let mut grid = SparseTsdfGrid::new(config, config.block_count(), Precision::Float).unwrap();
    let k = camera(160, 120);
    let pose = Pose::look_at(Vec3::new(0.0, 0.0, -1.5), Vec3::zeros(), Vec3::y());
    for i in 0..frames {
        let noise = NoiseModel {
            sigma0,
            seed: seed * 1000 + i,
        };
        fuse_frame(
            &mut grid,
            &render_synthetic_depth(&plane_scene(), &pose, &k, Some(noise)),
            &pose,
            &params,
        )
        .unwrap();
    }
    let r = config.resolution();
    let (mut sum, mut n) = (0.0, 0);
    for z in 0..r {
        for y in 0..r {
            for x in 0..r {
                let c = config.voxel_center([x, y, z]);
                if c.z.abs() > 2.0 * h {
                    continue;
                }
                if let Some(t) = grid.read_voxel([x as i64, y as i64, z as i64]).unwrap().tsdf {
                    sum += (t + c.z).powi(2);
                    n += 1;
                }
            }
        }
    }
    assert!(n > 1000);
    sum / n as f64
}

#[test]
fn weighted_update_converges_faster_than_fixed_blend() {
    for seed in 0..3 {
        let simple = plane_mse(FusionMode::Simple, 5, seed);
        let weighted = plane_mse(FusionMode::Weighted, 5, seed);
        assert!(
            weighted <= simple,
            "seed {seed}: weighted {weighted:e} simple {simple:e}"
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn stored_distances_never_leave_the_band(
        mode in prop_oneof![Just(FusionMode::Simple), Just(FusionMode::Weighted), Just(FusionMode::Kalman)],
        start in 0.0..360.0f64,
        step in 5.0..60.0f64,
        noise in 0.0..0.01f64,
        seed in any::<u64>(),
    ) {
        let config = GridConfig::new(8, 8, Vec3::repeat(-1.0), 2.0).unwrap();
        let mut params = FusionParams::new(mode, config.truncation);
        params.sigma0 = noise;
        let config = config.with_aux(params.aux_encoding()).unwrap();
        let mut grid = SparseTsdfGrid::new(config, config.block_count(), Precision::Quantized).unwrap();
        let k = camera(80, 60);
        let scene = cluster_scene();
        for i in 0..3 {
            let pose = orbit_pose(start + step * i as f64);
            let frame = render_synthetic_depth(&scene, &pose, &k, Some(NoiseModel { sigma0: noise, seed: seed.wrapping_add(i) }));
            fuse_frame(&mut grid, &frame, &pose, &params).unwrap();
        }
        let r = config.resolution() as i64;
        for z in 0..r {
            for y in 0..r {
                for x in 0..r {
                    if let Some(t) = grid.tsdf_at(x, y, z) {
                        prop_assert!(t.abs() <= config.truncation);
                    }
                }
            }
        }
        prop_assert!(grid.check_consistency().is_ok());
    }
}
