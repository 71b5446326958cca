use nalgebra::Rotation3;

use crate::error::{FusionError, Result};
use crate::{Mat3, Vec3};

/// Rigid transform mapping sensor (camera) coordinates to scene coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

/// Six-parameter motion increment: small rotation angles about x, y, z and a
/// translation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SmallMotion {
    pub rotation: Vec3,
    pub translation: Vec3,
}

const ORTHONORMAL_TOLERANCE: f64 = 1e-9;

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds a pose, rejecting matrices that are not proper rotations.
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        let pose = Self { rotation, translation };
        if !pose.is_valid() {
            return Err(FusionError::InvalidConfig(
                "rotation is not orthonormal with determinant +1".into(),
            ));
        }
        Ok(pose)
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            rotation: Mat3::identity(),
            translation,
        }
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64, translation: Vec3) -> Self {
        let rotation = match nalgebra::Unit::try_new(axis, 1e-15) {
            Some(axis) => *Rotation3::from_axis_angle(&axis, angle).matrix(),
            None => Mat3::identity(),
        };
        Self { rotation, translation }
    }

    /// Camera at `eye` looking at `target`; image y points away from `up`.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Self {
        let z = (target - eye).normalize();
        let x = z.cross(&up).normalize();
        let y = z.cross(&x);
        Self {
            rotation: Mat3::from_columns(&[x, y, z]),
            translation: eye,
        }
    }

    pub fn is_valid(&self) -> bool {
        let gram = self.rotation.transpose() * self.rotation;
        (gram - Mat3::identity()).abs().max() <= ORTHONORMAL_TOLERANCE
            && (self.rotation.determinant() - 1.0).abs() <= ORTHONORMAL_TOLERANCE
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    #[inline]
    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// Left-composes the rigid motion described by `motion` onto this pose.
    ///
    /// The rotation is built from the small-angle matrix `I + [r]x` and then
    /// projected onto the nearest rotation.
    pub fn apply_motion(&self, motion: &SmallMotion) -> Pose {
        motion.to_pose().compose(self)
    }

    /// Rotation angle of `self⁻¹ ∘ other`, in radians.
    pub fn rotation_angle_to(&self, other: &Pose) -> f64 {
        rotation_angle(&(self.rotation.transpose() * other.rotation))
    }

    pub fn translation_distance_to(&self, other: &Pose) -> f64 {
        (self.translation - other.translation).norm()
    }

    /// Row-major rotation followed by translation.
    pub fn to_row(&self) -> [f64; 12] {
        let r = &self.rotation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            self.translation.x,
            self.translation.y,
            self.translation.z,
        ]
    }

    /// Inverse of [`Pose::to_row`]. A rotation block printed with limited
    /// precision is re-orthonormalized; exact rows round-trip unchanged.
    pub fn from_row(row: &[f64]) -> Result<Pose> {
        if row.len() != 12 {
            return Err(FusionError::InvalidConfig(format!(
                "pose row needs 12 values, got {}",
                row.len()
            )));
        }
        let rotation = Mat3::new(row[0], row[1], row[2], row[3], row[4], row[5], row[6], row[7], row[8]);
        let deviation = (rotation.transpose() * rotation - Mat3::identity()).abs().max();
        if deviation > 1e-4 || rotation.determinant() <= 0.0 {
            return Err(FusionError::InvalidConfig(
                "pose row rotation is not a rotation matrix".into(),
            ));
        }
        Ok(Pose {
            rotation: if deviation > 1e-12 {
                nearest_rotation(&rotation)
            } else {
                rotation
            },
            translation: Vec3::new(row[9], row[10], row[11]),
        })
    }
}

impl SmallMotion {
    pub fn new(rotation: Vec3, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_array(x: &[f64; 6]) -> Self {
        Self {
            rotation: Vec3::new(x[0], x[1], x[2]),
            translation: Vec3::new(x[3], x[4], x[5]),
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.rotation.x,
            self.rotation.y,
            self.rotation.z,
            self.translation.x,
            self.translation.y,
            self.translation.z,
        ]
    }

    /// The first-order rotation matrix `I + [r]x` for angles (α, β, γ).
    pub fn linearized_rotation(&self) -> Mat3 {
        let (a, b, g) = (self.rotation.x, self.rotation.y, self.rotation.z);
        Mat3::new(1.0, -g, b, g, 1.0, -a, -b, a, 1.0)
    }

    pub fn to_pose(&self) -> Pose {
        Pose {
            rotation: nearest_rotation(&self.linearized_rotation()),
            translation: self.translation,
        }
    }
}

/// Closest proper rotation in the Frobenius sense (polar factor via SVD).
pub(crate) fn nearest_rotation(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

pub(crate) fn rotation_angle(r: &Mat3) -> f64 {
    let c = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let angle = c.acos();
    if angle < 1e-4 {
        // acos loses precision near identity; use the skew part instead.
        let s = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
        return (0.5 * s.norm()).asin();
    }
    angle
}
