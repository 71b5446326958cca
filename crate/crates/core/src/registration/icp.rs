use nalgebra::Vector6;

use crate::error::{FusionError, Result};
use crate::geometry::{DepthFrame, NormalMap, Pose};

use super::matching::match_points;
use super::normal_equation::{assemble, shrink, ShrinkFrame};
use super::solve::{solve_gated, GatedSolution};
use super::{MatchParams, PointMatch, MIN_MATCHES};

/// Outcome of one registration.
#[derive(Debug, Clone)]
pub struct IcpResult {
    /// Source camera to target camera.
    pub delta: Pose,
    pub solution: GatedSolution,
    pub iterations: usize,
    pub matches: usize,
    pub converged: bool,
}

/// RMS of the linearized point-to-plane residual after applying a shrunk
/// motion.
pub fn predicted_residual_rms(matches: &[PointMatch], frame: &ShrinkFrame, shrunk: &Vector6<f64>) -> f64 {
    if matches.is_empty() {
        return 0.0;
    }
    let shrunk_matches = super::normal_equation::shrink_with(matches, frame);
    let sum: f64 = shrunk_matches
        .iter()
        .zip(matches)
        .map(|(s, m)| {
            let g = Vector6::new(s.c.x, s.c.y, s.c.z, s.n.x, s.n.y, s.n.z);
            let r = (m.p - m.q).dot(&m.n) + g.dot(shrunk);
            r * r
        })
        .sum();
    (sum / matches.len() as f64).sqrt()
}

/// Point-to-plane ICP of `source` (a captured frame) against `target` (a
/// rendering of the model), starting from `initial`. Returns the motion from
/// source camera to target camera coordinates.
pub fn icp(
    source: &DepthFrame,
    source_normals: &NormalMap,
    target: &DepthFrame,
    target_normals: &NormalMap,
    initial: &Pose,
    params: &MatchParams,
) -> Result<IcpResult> {
    let mut delta = *initial;
    let mut last = None;
    for iteration in 1..=params.max_iterations {
        let matches = match_points(source, source_normals, target, target_normals, &delta, params);
        if matches.len() < MIN_MATCHES {
            return Err(FusionError::TrackingLost {
                iteration,
                matches: matches.len(),
            });
        }
        let (shrunk, frame) = shrink(&matches, params.min_extent)?;
        let eq = assemble(&shrunk, &frame);
        let mut solution = solve_gated(&eq, params.eigen_threshold);
        solution.residual_rms = predicted_residual_rms(&matches, &frame, &solution.shrunk);
        delta = delta.apply_motion(&solution.motion);
        let converged = solution.shrunk.norm() < params.convergence_epsilon;
        let matches = matches.len();
        last = Some(IcpResult {
            delta,
            solution,
            iterations: iteration,
            matches,
            converged,
        });
        if converged {
            break;
        }
    }
    last.ok_or_else(|| FusionError::InvalidConfig("max_iterations must be at least 1".into()))
}

/// Starting pose for registration: `previous` with an optional externally
/// supplied motion composed on, expressed in the previous camera frame.
pub fn initial_transform_hook(previous: &Pose, external: Option<&Pose>) -> Pose {
    match external {
        Some(d) => previous.compose(d),
        None => *previous,
    }
}
