use std::path::PathBuf;

use crate::error::{FusionError, Result};
use crate::geometry::{
    orbit_trajectory, read_trajectory, render_synthetic_depth, AnalyticScene, DepthFrame, Intrinsics, NoiseModel, Pose,
};

use super::config::{InputSection, PipelineConfig};

/// Frames and, when known, their true poses.
#[derive(Debug, Clone)]
pub enum FrameSource {
    Synthetic {
        scene: AnalyticScene,
        intrinsics: Intrinsics,
        poses: Vec<Pose>,
        noise: Option<NoiseModel>,
    },
    Files {
        paths: Vec<PathBuf>,
        poses: Option<Vec<Pose>>,
    },
}

/// Per-frame noise seed: distinct streams for every frame of a run.
pub fn frame_seed(seed: u64, frame: usize) -> u64 {
    seed ^ (frame as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl FrameSource {
    pub fn from_config(config: &PipelineConfig) -> Result<Self> {
        let source = match &config.input {
            InputSection::Synthetic {
                primitives,
                orbit,
                trajectory,
                frames,
            } => {
                let poses = match (orbit, trajectory) {
                    (Some(o), _) => orbit_trajectory(o, frames.unwrap_or(20)),
                    (None, Some(path)) => {
                        let mut p = read_trajectory(path)?;
                        if let Some(n) = frames {
                            p.truncate(*n);
                        }
                        p
                    }
                    (None, None) => {
                        return Err(FusionError::InvalidConfig("synthetic input needs a camera path".into()))
                    }
                };
                let intrinsics = config
                    .camera
                    .ok_or_else(|| FusionError::InvalidConfig("synthetic input needs a [camera] section".into()))?;
                let noise = (config.noise.sigma0 > 0.0).then_some(NoiseModel {
                    sigma0: config.noise.sigma0,
                    seed: config.seed,
                });
                FrameSource::Synthetic {
                    scene: AnalyticScene::new(primitives.clone(), config.grid.box_side),
                    intrinsics,
                    poses,
                    noise,
                }
            }
            InputSection::Files { dir, trajectory } => {
                let entries = std::fs::read_dir(dir).map_err(|e| FusionError::io(dir, e))?;
                let mut paths = Vec::new();
                for entry in entries {
                    let path = entry.map_err(|e| FusionError::io(dir, e))?.path();
                    if path.extension().is_some_and(|x| x == "dfrm") {
                        paths.push(path);
                    }
                }
                paths.sort();
                let poses = trajectory.as_deref().map(read_trajectory).transpose()?;
                if let Some(p) = &poses {
                    if p.len() < paths.len() {
                        return Err(FusionError::InvalidConfig(format!(
                            "trajectory has {} poses for {} frames",
                            p.len(),
                            paths.len()
                        )));
                    }
                }
                FrameSource::Files { paths, poses }
            }
        };
        Ok(source)
    }

    pub fn len(&self) -> usize {
        match self {
            FrameSource::Synthetic { poses, .. } => poses.len(),
            FrameSource::Files { paths, .. } => paths.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Acquires frame `i`.
    pub fn frame(&self, i: usize) -> Result<DepthFrame> {
        match self {
            FrameSource::Synthetic {
                scene,
                intrinsics,
                poses,
                noise,
            } => {
                let noise = noise.map(|n| NoiseModel {
                    seed: frame_seed(n.seed, i),
                    ..n
                });
                Ok(render_synthetic_depth(scene, &poses[i], intrinsics, noise))
            }
            FrameSource::Files { paths, .. } => DepthFrame::read_dfrm(&paths[i]),
        }
    }

    pub fn ground_truth(&self, i: usize) -> Option<Pose> {
        match self {
            FrameSource::Synthetic { poses, .. } => poses.get(i).copied(),
            FrameSource::Files { poses, .. } => poses.as_ref().and_then(|p| p.get(i).copied()),
        }
    }

    /// The analytic scene when the input is synthetic.
    pub fn scene(&self) -> Option<&AnalyticScene> {
        match self {
            FrameSource::Synthetic { scene, .. } => Some(scene),
            FrameSource::Files { .. } => None,
        }
    }
}
