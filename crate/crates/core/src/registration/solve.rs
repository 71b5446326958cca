use nalgebra::{Matrix6, Vector6};

use crate::geometry::SmallMotion;
use crate::Vec3;

use super::eigen::jacobi_eigen;
use super::normal_equation::{NormalEquation, ShrinkFrame};

/// Motion estimate with its eigen-analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct GatedSolution {
    /// Motion in scene units.
    pub motion: SmallMotion,
    /// Solution `[r̂; t̂]` of the shrunk system restricted to kept directions.
    pub shrunk: Vector6<f64>,
    /// Eigenvalues of `A`, descending.
    pub eigenvalues: Vector6<f64>,
    /// Unit eigenvectors as columns, in eigenvalue order.
    pub eigenvectors: Matrix6<f64>,
    /// `kept[i]` is true when `λ_i / N_pairs > θ`, i.e. the direction was used.
    pub kept: [bool; 6],
    pub pair_count: usize,
    /// RMS point-to-plane residual predicted after applying the motion, meters.
    pub residual_rms: f64,
}

impl GatedSolution {
    pub fn normalized_eigenvalues(&self) -> Vector6<f64> {
        self.eigenvalues / self.pair_count.max(1) as f64
    }

    pub fn kept_mask_bits(&self) -> String {
        self.kept.iter().map(|&k| if k { '1' } else { '0' }).collect()
    }
}

/// Maps a shrunk solution back to scene units: `r = S⁻¹ r̂`, `t = t̂ − r × m`.
pub fn unshrink(shrunk: &Vector6<f64>, frame: &ShrinkFrame) -> SmallMotion {
    let r_hat = Vec3::new(shrunk[0], shrunk[1], shrunk[2]);
    let t_hat = Vec3::new(shrunk[3], shrunk[4], shrunk[5]);
    let r = r_hat.component_div(&frame.scale);
    SmallMotion::new(r, t_hat - r.cross(&frame.center))
}

/// Solves the shrunk system keeping only directions whose eigenvalue per pair
/// exceeds `threshold`: `x̂′ = Σ_kept v_i (v_i·b) / λ_i`.
///
/// When every direction is gated the motion is zero and `kept` is all false.
/// `residual_rms` is left at zero; see [`super::predicted_residual_rms`].
pub fn solve_gated(eq: &NormalEquation, threshold: f64) -> GatedSolution {
    let (values, vectors) = jacobi_eigen(&eq.a);
    let n = eq.pair_count.max(1) as f64;
    let mut kept = [false; 6];
    let mut x = Vector6::zeros();
    for i in 0..6 {
        if values[i] / n > threshold {
            kept[i] = true;
            let v = vectors.column(i);
            x += v * (v.dot(&eq.b) / values[i]);
        }
    }
    GatedSolution {
        motion: unshrink(&x, &eq.frame),
        shrunk: x,
        eigenvalues: values,
        eigenvectors: vectors,
        kept,
        pair_count: eq.pair_count,
        residual_rms: 0.0,
    }
}

/// Plain LU solve of the shrunk system; `None` if singular.
pub fn solve_direct(eq: &NormalEquation) -> Option<Vector6<f64>> {
    eq.a.lu().solve(&eq.b)
}
