//! Pinhole camera model, rigid poses, depth and normal maps, and a synthetic
//! depth camera over analytic scenes.
//!
//! Conventions: right-handed camera frame with x to the right, y down and z
//! forward; pixel `(u, v)` has its center at integer coordinates with the
//! origin at the top-left corner of the image; poses map camera coordinates to
//! scene coordinates.

mod camera;
mod frame;
mod pose;
mod scene;
mod trajectory;

pub use camera::Intrinsics;
pub use frame::{compute_normals, discontinuity_threshold, DepthFrame, NormalMap};
pub use pose::{Pose, SmallMotion};
pub use scene::{render_synthetic_depth, AnalyticScene, NoiseModel, Primitive};
pub use trajectory::{orbit_trajectory, read_trajectory, write_trajectory, OrbitSpec};
