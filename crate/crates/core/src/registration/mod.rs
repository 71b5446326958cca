//! Point-to-plane ICP with unit-cube reconditioning and eigenvalue gating.
//!
//! The 6-vector motion is `[r; t]`: a small rotation vector (rotation
//! linearized as `I + [r]×`) followed by a translation.

mod eigen;
mod icp;
mod matching;
mod normal_equation;
mod solve;

pub use eigen::jacobi_eigen;
pub use icp::{icp, initial_transform_hook, predicted_residual_rms, IcpResult};
pub use matching::match_points;
pub use normal_equation::{assemble, shrink, shrink_with, NormalEquation, ShrinkFrame, ShrunkMatch};
pub use solve::{solve_direct, solve_gated, unshrink, GatedSolution};

use serde::{Deserialize, Serialize};

use crate::error::{FusionError, Result};
use crate::Vec3;

/// Fewer matches than this in any iteration means tracking is lost.
pub const MIN_MATCHES: usize = 10;

/// One source/target correspondence in target camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMatch {
    /// Source point after the current motion estimate.
    pub p: Vec3,
    pub q: Vec3,
    /// Unit target normal.
    pub n: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchParams {
    /// Largest accepted point distance, meters.
    pub max_distance: f64,
    /// Largest accepted normal deviation, radians.
    pub max_normal_angle: f64,
    pub max_iterations: usize,
    /// Stop once the shrunk motion norm falls below this.
    pub convergence_epsilon: f64,
    /// Directions with eigenvalue per pair at or below this are discarded.
    pub eigen_threshold: f64,
    /// Floor on each side of the shrink box, meters.
    pub min_extent: f64,
}

impl MatchParams {
    pub fn for_voxel_size(voxel_size: f64) -> Self {
        Self {
            max_distance: 10.0 * voxel_size,
            max_normal_angle: 30f64.to_radians(),
            max_iterations: 15,
            convergence_epsilon: 1e-5,
            eigen_threshold: 0.005,
            min_extent: voxel_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.max_distance,
            self.max_normal_angle,
            self.convergence_epsilon,
            self.eigen_threshold,
            self.min_extent,
        ];
        if positive.iter().all(|x| *x > 0.0) && self.max_iterations > 0 {
            Ok(())
        } else {
            Err(FusionError::InvalidConfig("match parameters must be positive".into()))
        }
    }
}

/// Per-frame registration summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegistrationReport {
    pub frame: usize,
    pub iterations: usize,
    pub matches: usize,
    pub residual_rms: f64,
    pub normalized_eigenvalues: [f64; 6],
    /// One character per eigen-direction, `1` when kept.
    pub kept: String,
}

impl RegistrationReport {
    pub const HEADER: [&'static str; 11] = [
        "frame",
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
    ];

    pub fn new(frame: usize, result: &IcpResult) -> Self {
        let l = result.solution.normalized_eigenvalues();
        Self {
            frame,
            iterations: result.iterations,
            matches: result.matches,
            residual_rms: result.solution.residual_rms,
            normalized_eigenvalues: [l[0], l[1], l[2], l[3], l[4], l[5]],
            kept: result.solution.kept_mask_bits(),
        }
    }

    pub fn record(&self) -> Vec<String> {
        let mut r = vec![
            self.frame.to_string(),
            self.iterations.to_string(),
            self.matches.to_string(),
            format!("{:e}", self.residual_rms),
        ];
        r.extend(self.normalized_eigenvalues.iter().map(|l| format!("{l:e}")));
        r.push(self.kept.clone());
        r
    }
}
