use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use crate::error::{FusionError, Result};
use crate::fusion::{fuse_frame, FusionStats};
use crate::geometry::{compute_normals, write_trajectory, AnalyticScene, Pose};
use crate::grid::SparseTsdfGrid;
use crate::registration::{icp, initial_transform_hook, RegistrationReport};
use crate::render::{marching_cubes, render_view, write_ply, MarchingCubesParams, Mesh};

use super::config::{PipelineConfig, TrackingMode};
use super::source::FrameSource;

/// Metrics of one processed frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRow {
    pub frame: usize,
    /// Logical stage stamps: a run-wide counter taken when each stage
    /// starts. `None` for stages the frame skipped.
    pub render_stamp: Option<u64>,
    pub register_stamp: Option<u64>,
    pub fuse_stamp: u64,
    pub registration: Option<RegistrationReport>,
    pub fusion: FusionStats,
    pub pose: Pose,
    /// Rotation (degrees) and translation (meters) error against the
    /// trajectory, when one is known.
    pub pose_error: Option<(f64, f64)>,
}

/// Distance of mesh vertices to the analytic surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshError {
    pub rms: f64,
    pub max: f64,
}

impl MeshError {
    pub fn measure(mesh: &Mesh, scene: &AnalyticScene) -> Option<Self> {
        if mesh.vertices.is_empty() {
            return None;
        }
        let (mut sum, mut max) = (0.0, 0.0f64);
        for v in &mesh.vertices {
            let d = scene.distance(v).abs();
            sum += d * d;
            max = max.max(d);
        }
        Some(Self {
            rms: (sum / mesh.vertices.len() as f64).sqrt(),
            max,
        })
    }
}

/// How the run ended.
#[derive(Debug)]
pub enum RunStatus {
    Completed,
    /// The run stopped at `frame`; outputs cover the frames before it.
    Aborted {
        frame: usize,
        error: FusionError,
    },
}

/// Wall-clock time spent per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimes {
    pub render: Duration,
    pub register: Duration,
    pub fuse: Duration,
    pub extract: Duration,
}

impl StageTimes {
    /// Shares of the total in the order render, register, fuse, extract.
    pub fn shares(&self) -> [f64; 4] {
        let t = [self.render, self.register, self.fuse, self.extract].map(|d| d.as_secs_f64());
        let total: f64 = t.iter().sum();
        if total > 0.0 {
            t.map(|x| x / total)
        } else {
            [0.0; 4]
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub frames: usize,
    pub tracking: TrackingMode,
    pub blocks_total: usize,
    pub memory_bytes: u64,
    pub vertices: usize,
    pub triangles: usize,
    pub voxel_size: f64,
    pub mesh_error: Option<MeshError>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub rows: Vec<FrameRow>,
    pub summary: RunSummary,
    pub times: StageTimes,
}

/// Everything a run produced.
#[derive(Debug)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub grid: SparseTsdfGrid,
    pub mesh: Mesh,
    pub status: RunStatus,
}

impl RunOutput {
    pub fn error(&self) -> Option<&FusionError> {
        match &self.status {
            RunStatus::Completed => None,
            RunStatus::Aborted { error, .. } => Some(error),
        }
    }
}

/// Runs the acquire, render, register, fuse loop over the configured input
/// and extracts a mesh at the end.
///
/// Configuration and input errors are returned as `Err`. Tracking loss and
/// pool exhaustion stop the loop but still produce outputs for the frames
/// fused so far, reported through [`RunOutput::status`].
pub fn run(config: &PipelineConfig) -> Result<RunOutput> {
    let source = FrameSource::from_config(config)?;
    run_source(config, &source)
}

pub fn run_source(config: &PipelineConfig, source: &FrameSource) -> Result<RunOutput> {
    let grid_config = config.grid_config()?;
    let params = config.fusion_params()?;
    let match_params = config.match_params()?;
    let capacity = config
        .grid
        .pool_capacity
        .unwrap_or_else(|| SparseTsdfGrid::default_capacity(&grid_config));
    let mut grid = SparseTsdfGrid::new(grid_config, capacity, config.precision())?;
    let voxel = grid_config.voxel_size();

    let count = config.max_frames.map_or(source.len(), |k| k.min(source.len()));
    if config.tracking != TrackingMode::Icp && count > 0 && source.ground_truth(0).is_none() {
        return Err(FusionError::InvalidConfig(format!(
            "tracking `{}` needs a trajectory",
            config.tracking.name()
        )));
    }

    let mut rows = Vec::with_capacity(count);
    let mut times = StageTimes::default();
    let mut stamp = 0u64;
    let mut next_stamp = || {
        stamp += 1;
        stamp
    };
    let mut previous: Option<Pose> = None;
    let mut status = RunStatus::Completed;

    for i in 0..count {
        let frame = source.frame(i)?;
        let truth = source.ground_truth(i);
        let (mut render_stamp, mut register_stamp, mut registration) = (None, None, None);

        let pose = match (previous, config.tracking) {
            (None, _) => truth.unwrap_or_else(Pose::identity),
            (Some(_), TrackingMode::GroundTruth) => truth.expect("checked above"),
            (Some(prev), mode) => {
                render_stamp = Some(next_stamp());
                let t = Instant::now();
                let (target, target_normals) = render_view(&grid, &prev, &frame.intrinsics);
                times.render += t.elapsed();

                register_stamp = Some(next_stamp());
                let t = Instant::now();
                let external = match mode {
                    TrackingMode::IcpWithHook => match (source.ground_truth(i - 1), truth) {
                        (Some(a), Some(b)) => Some(a.inverse().compose(&b)),
                        _ => None,
                    },
                    _ => None,
                };
                let initial = prev
                    .inverse()
                    .compose(&initial_transform_hook(&prev, external.as_ref()));
                let source_normals = compute_normals(&frame, voxel);
                let result = icp(
                    &frame,
                    &source_normals,
                    &target,
                    &target_normals,
                    &initial,
                    &match_params,
                );
                times.register += t.elapsed();
                match result {
                    Ok(r) => {
                        registration = Some(RegistrationReport::new(i, &r));
                        prev.compose(&r.delta)
                    }
                    Err(error) => {
                        status = RunStatus::Aborted { frame: i, error };
                        break;
                    }
                }
            }
        };

        let fuse_stamp = next_stamp();
        let t = Instant::now();
        let fused = fuse_frame(&mut grid, &frame, &pose, &params);
        times.fuse += t.elapsed();
        let fusion = match fused {
            Ok(s) => s,
            Err(error @ FusionError::PoolExhausted { .. }) => {
                status = RunStatus::Aborted { frame: i, error };
                break;
            }
            Err(e) => return Err(e),
        };

        rows.push(FrameRow {
            frame: i,
            render_stamp,
            register_stamp,
            fuse_stamp,
            registration,
            fusion,
            pose,
            pose_error: truth.map(|g| {
                (
                    pose.rotation_angle_to(&g).to_degrees(),
                    pose.translation_distance_to(&g),
                )
            }),
        });
        log::info!(
            "frame {i}: {} voxels updated, {} blocks",
            fusion.voxels_updated,
            fusion.blocks_total
        );
        previous = Some(pose);
    }

    let t = Instant::now();
    let mesh = marching_cubes(&grid, None, &MarchingCubesParams::default());
    times.extract += t.elapsed();

    let summary = RunSummary {
        frames: rows.len(),
        tracking: config.tracking,
        blocks_total: grid.allocated_count(),
        memory_bytes: grid.memory_bytes(),
        vertices: mesh.vertices.len(),
        triangles: mesh.triangles.len(),
        voxel_size: voxel,
        mesh_error: source.scene().and_then(|s| MeshError::measure(&mesh, s)),
    };
    Ok(RunOutput {
        metrics: RunMetrics { rows, summary, times },
        grid,
        mesh,
        status,
    })
}

pub const METRICS_HEADER: [&str; 26] = [
    "frame",
    "render_stamp",
    "register_stamp",
    "fuse_stamp",
    "iterations",
    "matches",
    "residual_rms",
    "lambda1",
    "lambda2",
    "lambda3",
    "lambda4",
    "lambda5",
    "lambda6",
    "kept",
    "mode",
    "voxels_updated",
    "blocks_allocated_now",
    "blocks_updated",
    "blocks_total",
    "memory_bytes",
    "tx",
    "ty",
    "tz",
    "rotation_error_deg",
    "translation_error",
    "tracking",
];

/// Writes one CSV row per processed frame.
pub fn write_metrics(path: &Path, metrics: &RunMetrics, mode: &str) -> Result<()> {
    let err = |e: csv::Error| FusionError::format(path, e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(METRICS_HEADER).map_err(err)?;
    let opt = |x: Option<u64>| x.map(|v| v.to_string()).unwrap_or_default();
    for row in &metrics.rows {
        let mut rec = vec![
            row.frame.to_string(),
            opt(row.render_stamp),
            opt(row.register_stamp),
            row.fuse_stamp.to_string(),
        ];
        match &row.registration {
            Some(r) => rec.extend(r.record().into_iter().skip(1)),
            None => rec.extend(std::iter::repeat_n(String::new(), RegistrationReport::HEADER.len() - 1)),
        }
        let s = &row.fusion;
        rec.extend([
            mode.to_string(),
            s.voxels_updated.to_string(),
            s.blocks_allocated_now.to_string(),
            s.blocks_updated.to_string(),
            s.blocks_total.to_string(),
            s.memory_bytes.to_string(),
        ]);
        rec.extend(row.pose.translation.iter().map(|x| format!("{x:.9e}")));
        match row.pose_error {
            Some((r, t)) => rec.extend([format!("{r:.6e}"), format!("{t:.6e}")]),
            None => rec.extend([String::new(), String::new()]),
        }
        rec.push(metrics.summary.tracking.name().to_string());
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| FusionError::io(path, e))
}

/// Human-readable run summary with stage timing shares.
pub fn summary_text(output: &RunOutput) -> String {
    let s = &output.metrics.summary;
    let mut t = String::new();
    let status = match &output.status {
        RunStatus::Completed => "completed".to_string(),
        RunStatus::Aborted { frame, error } => format!("aborted at frame {frame} (partial outputs): {error}"),
    };
    let _ = writeln!(t, "status: {status}");
    let _ = writeln!(t, "frames fused: {}", s.frames);
    let _ = writeln!(t, "tracking: {}", s.tracking.name());
    let _ = writeln!(t, "blocks allocated: {}", s.blocks_total);
    let _ = writeln!(t, "memory bytes: {}", s.memory_bytes);
    if let Some(FusionError::PoolExhausted { capacity }) = output.error() {
        let _ = writeln!(t, "pool capacity: {capacity} blocks (all in use)");
    }
    let _ = writeln!(t, "mesh: {} vertices, {} triangles", s.vertices, s.triangles);
    if let Some(e) = s.mesh_error {
        let _ = writeln!(
            t,
            "mesh error: rms {:.6e} m ({:.4} voxel), max {:.6e} m ({:.4} voxel)",
            e.rms,
            e.rms / s.voxel_size,
            e.max,
            e.max / s.voxel_size
        );
    }
    let [r, g, f, x] = output.metrics.times.shares();
    let _ = writeln!(
        t,
        "time shares: render {:.1}%, register {:.1}%, fuse {:.1}%, extract {:.1}%",
        100.0 * r,
        100.0 * g,
        100.0 * f,
        100.0 * x
    );
    t
}

/// Writes mesh.ply, metrics.csv, summary.txt, trajectory.csv and a grid
/// snapshot into `dir`.
pub fn write_outputs(output: &RunOutput, config: &PipelineConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| FusionError::io(dir, e))?;
    write_ply(&output.mesh, &dir.join("mesh.ply"))?;
    write_metrics(&dir.join("metrics.csv"), &output.metrics, config.fusion.mode.name())?;
    let poses: Vec<Pose> = output.metrics.rows.iter().map(|r| r.pose).collect();
    write_trajectory(&dir.join("trajectory.csv"), &poses)?;
    output.grid.write_snapshot(&dir.join("grid.stsg"))?;
    let path = dir.join("summary.txt");
    std::fs::write(&path, summary_text(output)).map_err(|e| FusionError::io(&path, e))
}
