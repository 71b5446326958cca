use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{FusionError, Result};
use crate::fusion::{FusionMode, FusionParams};
use crate::geometry::{Intrinsics, OrbitSpec, Primitive};
use crate::grid::{GridConfig, Precision};
use crate::registration::MatchParams;
use crate::Vec3;

/// How each frame's pose is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackingMode {
    /// Register against a raycast of the model from the previous pose.
    #[default]
    Icp,
    /// Use the trajectory poses directly; nothing is registered.
    GroundTruth,
    /// Like `Icp`, but seeded with the relative trajectory motion through
    /// the initial-transform hook.
    IcpWithHook,
}

impl TrackingMode {
    pub fn name(&self) -> &'static str {
        match self {
            TrackingMode::Icp => "icp",
            TrackingMode::GroundTruth => "ground_truth",
            TrackingMode::IcpWithHook => "icp_with_hook",
        }
    }
}

impl std::str::FromStr for TrackingMode {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "icp" => Ok(TrackingMode::Icp),
            "ground_truth" => Ok(TrackingMode::GroundTruth),
            "icp_with_hook" => Ok(TrackingMode::IcpWithHook),
            _ => Err(FusionError::InvalidConfig(format!("unknown tracking mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecisionSetting {
    #[default]
    Quantized,
    Float,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub blocks_per_axis: usize,
    pub voxels_per_block_axis: usize,
    pub box_side: f64,
    /// Minimum corner; defaults to a box centered on the origin.
    #[serde(default)]
    pub box_origin: Option<[f64; 3]>,
    /// Truncation distance in voxels.
    #[serde(default = "default_truncation_voxels")]
    pub truncation_voxels: f64,
    /// Payload pool size in blocks; defaults to one eighth of all blocks.
    #[serde(default)]
    pub pool_capacity: Option<usize>,
    #[serde(default)]
    pub precision: PrecisionSetting,
}

fn default_truncation_voxels() -> f64 {
    4.0
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            blocks_per_axis: 32,
            voxels_per_block_axis: 8,
            box_side: 2.0,
            box_origin: None,
            truncation_voxels: default_truncation_voxels(),
            pool_capacity: None,
            precision: PrecisionSetting::Quantized,
        }
    }
}

impl GridSection {
    /// Grid geometry; the auxiliary encoding is filled in from the fusion
    /// mode by [`PipelineConfig::grid_config`].
    pub fn geometry(&self) -> Result<GridConfig> {
        let origin = self
            .box_origin
            .map(Vec3::from)
            .unwrap_or_else(|| Vec3::repeat(-0.5 * self.box_side));
        let config = GridConfig::new(self.blocks_per_axis, self.voxels_per_block_axis, origin, self.box_side)?;
        config.with_truncation(self.truncation_voxels * config.voxel_size())
    }
}

/// Fusion overrides; unset fields take the defaults of [`FusionParams::new`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionSection {
    #[serde(default)]
    pub mode: FusionMode,
    pub w_fixed: Option<f64>,
    pub w_max: Option<f64>,
    pub process_variance: Option<f64>,
    /// Defaults to the noise model's coefficient when noise is on.
    pub sigma0: Option<f64>,
    pub refinement_steps: Option<usize>,
    pub edge_weighting: Option<bool>,
}

/// Registration overrides; unset fields take [`MatchParams::for_voxel_size`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchSection {
    pub max_distance: Option<f64>,
    pub max_normal_angle_deg: Option<f64>,
    pub max_iterations: Option<usize>,
    pub convergence_epsilon: Option<f64>,
    pub eigen_threshold: Option<f64>,
    pub min_extent: Option<f64>,
}

/// Where frames come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputSection {
    /// Depth rendered from an analytic scene along an orbit or a trajectory
    /// file.
    Synthetic {
        primitives: Vec<Primitive>,
        #[serde(default)]
        orbit: Option<OrbitSpec>,
        #[serde(default)]
        trajectory: Option<PathBuf>,
        #[serde(default)]
        frames: Option<usize>,
    },
    /// `*.dfrm` files of a directory in name order, with an optional
    /// trajectory.
    Files {
        dir: PathBuf,
        #[serde(default)]
        trajectory: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    /// Depth deviation coefficient (`σ0·z²`); 0 disables noise.
    #[serde(default)]
    pub sigma0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_output_dir")]
    pub dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: default_output_dir(),
        }
    }
}

/// Single-voxel filter comparison settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FiltersSection {
    pub trials: usize,
    pub steps: usize,
    /// True distance held by the voxel, meters.
    pub signal: f64,
    pub truncation: f64,
    /// Measurement deviation at the first step, meters.
    pub sigma_start: f64,
    /// Ratio of final to initial deviation.
    pub ramp: f64,
    /// Blend weight of the fixed-weight filter; the others are matched to it.
    pub w_fixed: f64,
    /// Share of the final steps whose squared error is averaged.
    pub tail_fraction: f64,
}

impl Default for FiltersSection {
    fn default() -> Self {
        Self {
            trials: 30,
            steps: 100,
            signal: 0.01,
            truncation: 0.2,
            sigma_start: 0.002,
            ramp: 10.0,
            w_fixed: 0.1,
            tail_fraction: 0.1,
        }
    }
}

/// Memory sweep settings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemorySection {
    /// `NxM` pairs, comma separated.
    pub sweep: Option<String>,
    /// Runs above this footprint are flagged.
    pub threshold_bytes: Option<u64>,
    /// Pool size in blocks for every run; defaults to `grid.pool_capacity`.
    pub pool_capacity: Option<usize>,
}

/// Complete pipeline configuration, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tracking: TrackingMode,
    /// Process at most this many frames.
    #[serde(default)]
    pub max_frames: Option<usize>,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub fusion: FusionSection,
    #[serde(default, rename = "match")]
    pub matching: MatchSection,
    /// Required for synthetic input; files carry their own intrinsics.
    #[serde(default)]
    pub camera: Option<Intrinsics>,
    pub input: InputSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub filters: FiltersSection,
    #[serde(default)]
    pub memory: MemorySection,
}

impl PipelineConfig {
    /// Reads a config file. Relative paths inside it are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FusionError::io(path, e))?;
        let mut config: Self = toml::from_str(&text).map_err(|e| FusionError::format(path, e.to_string()))?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| FusionError::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.input {
            InputSection::Synthetic { trajectory, .. } => trajectory.iter_mut().for_each(fix),
            InputSection::Files { dir, trajectory } => {
                fix(dir);
                trajectory.iter_mut().for_each(fix);
            }
        }
        fix(&mut self.output.dir);
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FusionError::InvalidConfig(m));
        self.grid_config()?;
        self.fusion_params()?.validate()?;
        self.match_params()?.validate()?;
        if !(self.noise.sigma0 >= 0.0) {
            return bad("noise.sigma0 must be non-negative".into());
        }
        let exists = |p: &PathBuf| {
            if p.exists() {
                Ok(())
            } else {
                bad(format!("{} does not exist", p.display()))
            }
        };
        match &self.input {
            InputSection::Synthetic { orbit, trajectory, .. } => {
                match (orbit, trajectory) {
                    (Some(_), Some(_)) => return bad("give either input.orbit or input.trajectory".into()),
                    (None, None) => return bad("synthetic input needs input.orbit or input.trajectory".into()),
                    (_, Some(t)) => exists(t)?,
                    _ => {}
                }
                match &self.camera {
                    Some(k) => k.validate()?,
                    None => return bad("synthetic input needs a [camera] section".into()),
                }
            }
            InputSection::Files { dir, trajectory } => {
                exists(dir)?;
                if let Some(t) = trajectory {
                    exists(t)?;
                }
                if trajectory.is_none() && self.tracking != TrackingMode::Icp {
                    return bad(format!("tracking `{}` needs a trajectory", self.tracking.name()));
                }
            }
        }
        Ok(())
    }

    pub fn grid_config(&self) -> Result<GridConfig> {
        let aux = self.fusion_params()?.aux_encoding();
        self.grid.geometry()?.with_aux(aux)
    }

    pub fn precision(&self) -> Precision {
        match self.grid.precision {
            PrecisionSetting::Quantized => Precision::Quantized,
            PrecisionSetting::Float => Precision::Float,
        }
    }

    pub fn fusion_params(&self) -> Result<FusionParams> {
        let geometry = self.grid.geometry()?;
        let f = &self.fusion;
        let mut p = FusionParams::new(f.mode, geometry.truncation);
        p.w_fixed = f.w_fixed.unwrap_or(p.w_fixed);
        p.w_max = f.w_max.unwrap_or(p.w_max);
        p.process_variance = f.process_variance.unwrap_or(p.process_variance);
        p.sigma0 = match f.sigma0 {
            Some(s) => s,
            None if self.noise.sigma0 > 0.0 => self.noise.sigma0,
            None => p.sigma0,
        };
        p.refinement_steps = f.refinement_steps.unwrap_or(p.refinement_steps);
        p.edge_weighting = f.edge_weighting.unwrap_or(p.edge_weighting);
        Ok(p)
    }

    pub fn match_params(&self) -> Result<MatchParams> {
        let m = &self.matching;
        let mut p = MatchParams::for_voxel_size(self.grid.geometry()?.voxel_size());
        p.max_distance = m.max_distance.unwrap_or(p.max_distance);
        p.max_normal_angle = m
            .max_normal_angle_deg
            .map(f64::to_radians)
            .unwrap_or(p.max_normal_angle);
        p.max_iterations = m.max_iterations.unwrap_or(p.max_iterations);
        p.convergence_epsilon = m.convergence_epsilon.unwrap_or(p.convergence_epsilon);
        p.eigen_threshold = m.eigen_threshold.unwrap_or(p.eigen_threshold);
        p.min_extent = m.min_extent.unwrap_or(p.min_extent);
        Ok(p)
    }
}
