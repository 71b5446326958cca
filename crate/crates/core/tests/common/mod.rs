//! Shared fixtures for the integration tests: the shipped sphere-cluster
//! configuration, a dense brute-force fusion reference and a mesh
//! rasterizer.
#![allow(dead_code)]

use std::io::Write;

use tsdf_fusion::fusion::quality_map;
use tsdf_fusion::grid::{FloatShadowGrid, Voxel};
use tsdf_fusion::pipeline::{InputSection, PipelineConfig};
use tsdf_fusion::{DepthFrame, FusionMode, FusionParams, Intrinsics, Mesh, Pose, Vec3};

pub const CLUSTER_TOML: &str = include_str!("../../../../configs/cluster_orbit.toml");

/// The shipped sphere-cluster orbit: 256³ voxels, 320×240 camera, 20 frames.
pub fn cluster_config() -> PipelineConfig {
    PipelineConfig::from_toml(CLUSTER_TOML).expect("shipped config parses")
}

pub fn cluster_primitives() -> Vec<tsdf_fusion::geometry::Primitive> {
    match cluster_config().input {
        InputSection::Synthetic { primitives, .. } => primitives,
        InputSection::Files { .. } => unreachable!("shipped config is synthetic"),
    }
}

pub fn cluster_scene() -> tsdf_fusion::AnalyticScene {
    tsdf_fusion::AnalyticScene::new(cluster_primitives(), 2.0)
}

pub fn camera(width: usize, height: usize) -> Intrinsics {
    let f = width as f64;
    Intrinsics::new(
        width,
        height,
        f,
        f,
        (width as f64 - 1.0) / 2.0,
        (height as f64 - 1.0) / 2.0,
        0.1,
        5.0,
    )
    .unwrap()
}

/// Pose on a circle of radius 1.5 at height 0.4 around the origin.
pub fn orbit_pose(angle_deg: f64) -> Pose {
    let a = angle_deg.to_radians();
    Pose::look_at(Vec3::new(1.5 * a.cos(), 1.5 * a.sin(), 0.4), Vec3::zeros(), Vec3::z())
}

/// Prints a result line that survives output capture, so that it shows up
/// in the plain `cargo test` log.
pub fn report(id: &str, pass: bool, detail: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "[{}] {id}: {detail}", if pass { "PASS" } else { "FAIL" });
}

/// Dense reference for `fuse_frame`: visits every voxel of the volume,
/// computes its projective measurement from scratch and applies the update
/// rule, with no block bookkeeping.
pub struct DenseFusion {
    pub grid: FloatShadowGrid,
    pub params: FusionParams,
}

impl DenseFusion {
    pub fn new(grid: FloatShadowGrid, params: FusionParams) -> Self {
        Self { grid, params }
    }

    pub fn fuse(&mut self, frame: &DepthFrame, pose: &Pose) {
        let c = *self.grid.config();
        let r = c.resolution();
        let h = c.voxel_size();
        let delta = c.truncation;
        let k = frame.intrinsics;
        let to_camera = pose.inverse();
        let quality = self.params.edge_weighting.then(|| quality_map(frame, h));
        for z in 0..r {
            for y in 0..r {
                for x in 0..r {
                    let p = to_camera.transform_point(&c.voxel_center([x, y, z]));
                    if p.z <= 0.0 {
                        continue;
                    }
                    let u = k.fx * p.x / p.z + k.cx;
                    let v = k.fy * p.y / p.z + k.cy;
                    let Some((depth, pu, pv)) = sample_depth(frame, u, v, h) else {
                        continue;
                    };
                    let measured = depth - p.z;
                    if measured.abs() > delta {
                        continue;
                    }
                    let q = quality.as_ref().map_or(1.0, |m| m[pv * k.width + pu]);
                    let sd = self.params.sigma0 * depth * depth;
                    let variance = (sd * sd).max(1e-12) / q;
                    let weight = self.params.w_fixed * q;
                    let old = self.grid.get([x, y, z]);
                    let next = update(&self.params, old, measured, variance, weight);
                    self.grid.set([x, y, z], next);
                }
            }
        }
    }
}

/// Nearest-pixel depth, replaced by the bilinear blend of the four
/// surrounding pixels when they are valid and within `3σ + 2h` of each other.
fn sample_depth(frame: &DepthFrame, u: f64, v: f64, h: f64) -> Option<(f64, usize, usize)> {
    let (w, ht) = (frame.width() as f64, frame.height() as f64);
    let (ru, rv) = (u.round(), v.round());
    if ru < 0.0 || rv < 0.0 || ru >= w || rv >= ht {
        return None;
    }
    let (pu, pv) = (ru as usize, rv as usize);
    let nearest = frame.depth_at(pu, pv)?;
    let (u0, v0) = (u.floor(), v.floor());
    if u0 < 0.0 || v0 < 0.0 || u0 + 1.0 >= w || v0 + 1.0 >= ht {
        return Some((nearest, pu, pv));
    }
    let (iu, iv) = (u0 as usize, v0 as usize);
    let corners = [
        frame.depth_at(iu, iv),
        frame.depth_at(iu + 1, iv),
        frame.depth_at(iu, iv + 1),
        frame.depth_at(iu + 1, iv + 1),
    ];
    let [Some(d00), Some(d10), Some(d01), Some(d11)] = corners else {
        return Some((nearest, pu, pv));
    };
    let lo = d00.min(d10).min(d01).min(d11);
    let hi = d00.max(d10).max(d01).max(d11);
    let sigma = frame.sigma_at(pu, pv).unwrap_or(0.0);
    if hi - lo > 3.0 * sigma + 2.0 * h {
        return Some((nearest, pu, pv));
    }
    let (a, b) = (u - u0, v - v0);
    let top = d00 + a * (d10 - d00);
    let bottom = d01 + a * (d11 - d01);
    Some((top + b * (bottom - top), pu, pv))
}

fn update(params: &FusionParams, old: Voxel, m: f64, variance: f64, weight: f64) -> Voxel {
    match (params.mode, old.tsdf) {
        (FusionMode::Simple, None) => Voxel {
            tsdf: Some(m),
            aux: 0.0,
        },
        (FusionMode::Simple, Some(t)) => Voxel {
            tsdf: Some((1.0 - weight) * t + weight * m),
            aux: 0.0,
        },
        (FusionMode::Weighted, None) => Voxel {
            tsdf: Some(m),
            aux: weight,
        },
        (FusionMode::Weighted, Some(t)) => Voxel {
            tsdf: Some((old.aux * t + weight * m) / (old.aux + weight)),
            aux: (old.aux + weight).min(params.w_max),
        },
        (FusionMode::Kalman, None) => Voxel {
            tsdf: Some(m),
            aux: variance,
        },
        (FusionMode::Kalman, Some(t)) => {
            let predicted = old.aux + params.process_variance;
            let gain = predicted / (predicted + variance);
            Voxel {
                tsdf: Some(t + gain * (m - t)),
                aux: (1.0 - gain) * predicted,
            }
        }
    }
}

/// Z-buffered depth of a mesh, point-sampled at pixel centers with
/// perspective-correct interpolation. Pixels not covered are `None`.
pub fn rasterize(mesh: &Mesh, pose: &Pose, k: &Intrinsics) -> Vec<Option<f64>> {
    let to_camera = pose.inverse();
    let mut depth: Vec<Option<f64>> = vec![None; k.pixel_count()];
    let cam: Vec<Vec3> = mesh.vertices.iter().map(|v| to_camera.transform_point(v)).collect();
    for t in &mesh.triangles {
        let p = t.map(|i| cam[i as usize]);
        if p.iter().any(|x| x.z <= k.near) {
            continue;
        }
        let s = p.map(|x| (k.fx * x.x / x.z + k.cx, k.fy * x.y / x.z + k.cy));
        let area = (s[1].0 - s[0].0) * (s[2].1 - s[0].1) - (s[2].0 - s[0].0) * (s[1].1 - s[0].1);
        if area.abs() < 1e-12 {
            continue;
        }
        let umin = s.iter().map(|x| x.0).fold(f64::INFINITY, f64::min).ceil().max(0.0);
        let umax = s
            .iter()
            .map(|x| x.0)
            .fold(f64::NEG_INFINITY, f64::max)
            .floor()
            .min(k.width as f64 - 1.0);
        let vmin = s.iter().map(|x| x.1).fold(f64::INFINITY, f64::min).ceil().max(0.0);
        let vmax = s
            .iter()
            .map(|x| x.1)
            .fold(f64::NEG_INFINITY, f64::max)
            .floor()
            .min(k.height as f64 - 1.0);
        if umin > umax || vmin > vmax {
            continue;
        }
        for v in vmin as usize..=vmax as usize {
            for u in umin as usize..=umax as usize {
                let (x, y) = (u as f64, v as f64);
                let edge = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (y - a.1) - (x - a.0) * (b.1 - a.1);
                let w0 = edge(s[1], s[2]) / area;
                let w1 = edge(s[2], s[0]) / area;
                let w2 = edge(s[0], s[1]) / area;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let inv_z = w0 / p[0].z + w1 / p[1].z + w2 / p[2].z;
                let z = 1.0 / inv_z;
                let slot = &mut depth[v * k.width + u];
                if slot.is_none_or(|d| z < d) {
                    *slot = Some(z);
                }
            }
        }
    }
    depth
}
