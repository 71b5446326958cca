//! Reconstruction of triangle meshes from depth map sequences.
//!
//! Depth frames are fused into a block-sparse truncated signed distance field
//! ([`grid::SparseTsdfGrid`]). Each incoming frame is registered against a
//! raycast of the current model with point-to-plane ICP whose unstable motion
//! directions are suppressed by eigenvalue gating ([`registration`]), and then
//! integrated voxel by voxel with a simple, weighted or Kalman update
//! ([`fusion`]). Meshes are extracted with sparse marching cubes ([`render`]).
//!
//! The [`geometry`] module also contains an analytic-scene depth camera used
//! to generate synthetic input with exact ground truth.

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fusion;
pub mod geometry;
pub mod grid;
pub mod pipeline;
pub mod registration;
pub mod render;

pub use error::{FusionError, Result};

pub use fusion::{FusionMode, FusionParams, FusionStats};
pub use geometry::{AnalyticScene, DepthFrame, Intrinsics, NormalMap, Pose, SmallMotion};
pub use grid::{GridConfig, Precision, SparseTsdfGrid};
pub use registration::{GatedSolution, MatchParams, NormalEquation, PointMatch};
pub use render::Mesh;

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
