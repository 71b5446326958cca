//! Integration of registered depth frames into the TSDF.

mod filters;
mod measurement;
mod selection;

pub use filters::{fuse_kalman, fuse_simple, fuse_weighted};
pub use measurement::{
    estimate_measurement, interpolated_depth, interpolation_threshold, quality_map, MeasurementContext,
    MeasurementSample, MIN_MEASUREMENT_VARIANCE,
};
pub use selection::{select_update_blocks, BlockSelection};

use serde::{Deserialize, Serialize};

use crate::error::{FusionError, Result};
use crate::geometry::{DepthFrame, Pose};
use crate::grid::{AuxEncoding, GridConfig, SparseTsdfGrid, Voxel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    Simple,
    Weighted,
    #[default]
    Kalman,
}

impl FusionMode {
    pub fn name(&self) -> &'static str {
        match self {
            FusionMode::Simple => "simple",
            FusionMode::Weighted => "weighted",
            FusionMode::Kalman => "kalman",
        }
    }
}

/// Update rule parameters. The truncation distance comes from the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    pub mode: FusionMode,
    /// Blend weight per measurement, in (0, 1).
    pub w_fixed: f64,
    /// Cap on the accumulated weight.
    pub w_max: f64,
    /// Variance added before each Kalman update, m².
    pub process_variance: f64,
    /// Depth noise coefficient: deviation is `sigma0 · z²`.
    pub sigma0: f64,
    /// Local search steps for the closest surface point; 0 disables it.
    pub refinement_steps: usize,
    /// Scale confidence by view angle and distance to depth edges.
    pub edge_weighting: bool,
}

impl FusionParams {
    /// Defaults for a grid with truncation `truncation`.
    pub fn new(mode: FusionMode, truncation: f64) -> Self {
        let step = truncation / crate::grid::TSDF_CODE_MAX as f64;
        Self {
            mode,
            w_fixed: 0.1,
            w_max: 20.0,
            process_variance: (0.1 * step).powi(2),
            sigma0: 2.5e-4,
            refinement_steps: 0,
            edge_weighting: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(FusionError::InvalidConfig(m.into()));
        if !(self.w_fixed > 0.0 && self.w_fixed < 1.0) {
            return bad("w_fixed must lie in (0, 1)");
        }
        if !(self.w_max > 0.0) {
            return bad("w_max must be positive");
        }
        if !(self.process_variance >= 0.0) {
            return bad("process variance must be non-negative");
        }
        if !(self.sigma0 >= 0.0) {
            return bad("sigma0 must be non-negative");
        }
        Ok(())
    }

    /// Auxiliary byte encoding matching the mode.
    pub fn aux_encoding(&self) -> AuxEncoding {
        match self.mode {
            FusionMode::Kalman => AuxEncoding::DEFAULT_VARIANCE,
            _ => AuxEncoding::Weight { max: self.w_max },
        }
    }
}

/// Per-frame fusion counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct FusionStats {
    pub voxels_updated: usize,
    pub blocks_allocated_now: usize,
    pub blocks_updated: usize,
    pub blocks_total: usize,
    pub memory_bytes: u64,
}

/// Applies one measurement to a stored voxel.
#[inline]
pub fn fuse_voxel(voxel: Voxel, sample: &MeasurementSample, params: &FusionParams, truncation: f64) -> Voxel {
    match params.mode {
        FusionMode::Simple => Voxel {
            tsdf: fuse_simple(voxel.tsdf, sample.tsdf, sample.weight, truncation),
            aux: 0.0,
        },
        FusionMode::Weighted => {
            let (tsdf, aux) = fuse_weighted(
                voxel.tsdf,
                voxel.aux,
                sample.tsdf,
                sample.weight,
                params.w_max,
                truncation,
            );
            Voxel { tsdf, aux }
        }
        FusionMode::Kalman => {
            let (tsdf, aux) = fuse_kalman(
                voxel.tsdf,
                voxel.aux,
                sample.tsdf,
                sample.variance,
                params.process_variance,
                truncation,
            );
            Voxel { tsdf, aux }
        }
    }
}

fn check_encoding(config: &GridConfig, params: &FusionParams) -> Result<()> {
    let ok = matches!(
        (params.mode, config.aux),
        (FusionMode::Simple, _)
            | (FusionMode::Weighted, AuxEncoding::Weight { .. })
            | (FusionMode::Kalman, AuxEncoding::Variance { .. })
    );
    if ok {
        Ok(())
    } else {
        Err(FusionError::InvalidConfig(format!(
            "{} fusion cannot use aux encoding {:?}",
            params.mode.name(),
            config.aux
        )))
    }
}

/// Allocates the blocks a frame touches and updates every voxel that receives
/// a measurement. `pose` maps camera to scene coordinates.
pub fn fuse_frame(
    grid: &mut SparseTsdfGrid,
    frame: &DepthFrame,
    pose: &Pose,
    params: &FusionParams,
) -> Result<FusionStats> {
    params.validate()?;
    let config = *grid.config();
    check_encoding(&config, params)?;

    let selection = select_update_blocks(grid, frame, pose);
    let before = grid.allocated_count();
    for &b in &selection.allocate {
        grid.allocate_block(b)?;
    }
    let blocks_allocated_now = grid.allocated_count() - before;

    let ctx = MeasurementContext::new(frame, pose, params, config.truncation, config.voxel_size());
    let m = config.voxels_per_block_axis;
    let voxels_updated = grid.update_blocks(&selection.update, |b, block| {
        let mut updated = 0;
        for lz in 0..m {
            for ly in 0..m {
                for lx in 0..m {
                    let center = config.voxel_center([b[0] * m + lx, b[1] * m + ly, b[2] * m + lz]);
                    let Some(sample) = ctx.estimate(&center) else { continue };
                    let i = lx + m * (ly + m * lz);
                    let next = fuse_voxel(block.get(i), &sample, params, config.truncation);
                    block.set(i, next);
                    updated += 1;
                }
            }
        }
        updated
    });

    Ok(FusionStats {
        voxels_updated,
        blocks_allocated_now,
        blocks_updated: selection.update.len(),
        blocks_total: grid.allocated_count(),
        memory_bytes: grid.memory_bytes(),
    })
}
