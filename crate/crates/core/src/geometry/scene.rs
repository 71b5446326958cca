use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DepthFrame, Intrinsics, Pose};
use crate::Vec3;

/// Analytic solid with an exact (or 1-Lipschitz) signed distance, positive
/// outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    /// Half-space `{x : normal·(x − point) ≤ 0}`.
    Plane {
        point: [f64; 3],
        normal: [f64; 3],
    },
    /// Box with the given half extents, optionally rotated by an axis-angle
    /// vector about its center.
    Cuboid {
        center: [f64; 3],
        half_extents: [f64; 3],
        #[serde(default)]
        rotation: [f64; 3],
    },
}

impl Primitive {
    pub fn distance(&self, x: &Vec3) -> f64 {
        match self {
            Primitive::Sphere { center, radius } => (x - Vec3::from(*center)).norm() - radius,
            Primitive::Plane { point, normal } => Vec3::from(*normal).normalize().dot(&(x - Vec3::from(*point))),
            Primitive::Cuboid {
                center,
                half_extents,
                rotation,
            } => {
                let rv = Vec3::from(*rotation);
                let local = if rv.norm() > 0.0 {
                    let pose = Pose::from_axis_angle(rv, rv.norm(), Vec3::zeros());
                    pose.rotation.transpose() * (x - Vec3::from(*center))
                } else {
                    x - Vec3::from(*center)
                };
                let q = local.abs() - Vec3::from(*half_extents);
                let outside = q.map(|c| c.max(0.0)).norm();
                outside + q.max().min(0.0)
            }
        }
    }
}

/// Union of primitives. Also carries the sphere-tracing tolerance, which
/// scales with the size of the scanned volume.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticScene {
    pub primitives: Vec<Primitive>,
    pub tolerance: f64,
    pub max_steps: usize,
}

/// Depth noise with deviation `sigma0 · z²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub sigma0: f64,
    pub seed: u64,
}

impl AnalyticScene {
    /// `box_side` is the extent of the scanning volume; the surface tolerance is
    /// `1e-5 · box_side`.
    pub fn new(primitives: Vec<Primitive>, box_side: f64) -> Self {
        Self {
            primitives,
            tolerance: 1e-5 * box_side,
            max_steps: 256,
        }
    }

    pub fn distance(&self, x: &Vec3) -> f64 {
        self.primitives
            .iter()
            .map(|p| p.distance(x))
            .fold(f64::INFINITY, f64::min)
    }

    /// Outward unit normal from the central-difference gradient.
    pub fn normal(&self, x: &Vec3) -> Vec3 {
        let h = 1e-6;
        let g = Vec3::new(
            self.distance(&(x + Vec3::x() * h)) - self.distance(&(x - Vec3::x() * h)),
            self.distance(&(x + Vec3::y() * h)) - self.distance(&(x - Vec3::y() * h)),
            self.distance(&(x + Vec3::z() * h)) - self.distance(&(x - Vec3::z() * h)),
        );
        g.normalize()
    }

    /// First surface hit along `origin + t·dir` for `t ∈ [t_min, t_max]`
    /// (`dir` unit length).
    pub fn trace(&self, origin: &Vec3, dir: &Vec3, t_min: f64, t_max: f64) -> Option<f64> {
        let mut t = t_min;
        if self.distance(&(origin + dir * t)) < 0.0 {
            return None;
        }
        for _ in 0..self.max_steps {
            let rho = self.distance(&(origin + dir * t));
            if rho < self.tolerance {
                return Some(self.polish(origin, dir, t));
            }
            t += rho;
            if t > t_max {
                return None;
            }
        }
        None
    }

    /// A few Newton steps on the distance along the ray so that grazing hits
    /// are as precise as frontal ones.
    fn polish(&self, origin: &Vec3, dir: &Vec3, mut t: f64) -> f64 {
        for _ in 0..4 {
            let x = origin + dir * t;
            let rho = self.distance(&x);
            let slope = self.normal(&x).dot(dir);
            if slope.abs() < 0.05 || rho.abs() < 1e-3 * self.tolerance {
                break;
            }
            t -= rho / slope;
        }
        t
    }
}

/// Renders the depth seen by a pinhole camera at `pose` by sphere tracing the
/// analytic scene. With a noise model, Gaussian noise of deviation `σ0·z²` is
/// added and the deviation recorded per pixel.
pub fn render_synthetic_depth(
    scene: &AnalyticScene,
    pose: &Pose,
    intrinsics: &Intrinsics,
    noise: Option<NoiseModel>,
) -> DepthFrame {
    let k = *intrinsics;
    let mut depth = vec![0f32; k.pixel_count()];
    depth.par_chunks_mut(k.width).enumerate().for_each(|(v, row)| {
        for (u, out) in row.iter_mut().enumerate() {
            let ray = k.ray(u as f64, v as f64);
            let scale = ray.norm();
            let dir = pose.transform_vector(&(ray / scale));
            if let Some(t) = scene.trace(&pose.translation, &dir, k.near * scale, k.far * scale) {
                *out = (t / scale) as f32;
            }
        }
    });
    let sigma = match noise {
        Some(model) if model.sigma0 > 0.0 => {
            let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
            let unit = Normal::new(0.0, 1.0).unwrap();
            let mut sigma = vec![0f32; depth.len()];
            for (d, s) in depth.iter_mut().zip(sigma.iter_mut()) {
                let draw: f64 = unit.sample(&mut rng);
                if *d <= 0.0 {
                    continue;
                }
                let z = *d as f64;
                let sd = model.sigma0 * z * z;
                let noisy = z + sd * draw;
                *s = sd as f32;
                *d = if noisy >= k.near && noisy <= k.far {
                    noisy as f32
                } else {
                    0.0
                };
            }
            Some(sigma)
        }
        _ => None,
    };
    DepthFrame {
        intrinsics: k,
        depth,
        sigma,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn camera() -> Intrinsics {
        Intrinsics::new(81, 61, 80.0, 80.0, 40.0, 30.0, 0.1, 6.0).unwrap()
    }

    fn unit_sphere_scene() -> AnalyticScene {
        AnalyticScene::new(
            vec![Primitive::Sphere {
                center: [0.0, 0.0, 2.0],
                radius: 1.0,
            }],
            4.0,
        )
    }

    #[test]
    fn axial_hit_on_unit_sphere() {
        let k = camera();
        let frame = render_synthetic_depth(&unit_sphere_scene(), &Pose::identity(), &k, None);
        let d = frame.depth_at(40, 30).unwrap();
        assert!((d - 1.0).abs() < 1e-4, "{d}");
        assert!(frame.sigma.is_none());
    }

    #[test]
    fn missed_rays_are_invalid() {
        let k = camera();
        let frame = render_synthetic_depth(&unit_sphere_scene(), &Pose::identity(), &k, None);
        assert!(frame.depth_at(0, 0).is_none());
    }

    #[test]
    fn depth_matches_closed_form_sphere_intersection() {
        let k = camera();
        let scene = unit_sphere_scene();
        let frame = render_synthetic_depth(&scene, &Pose::identity(), &k, None);
        let c = Vec3::new(0.0, 0.0, 2.0);
        let mut checked = 0;
        for v in 0..k.height {
            for u in 0..k.width {
                let dir = k.ray(u as f64, v as f64).normalize();
                let b = dir.dot(&c);
                let disc = b * b - (c.norm_squared() - 1.0);
                match frame.depth_at(u, v) {
                    // grazing rays passing within the trace tolerance count as hits
                    Some(_) if disc < 0.0 => {
                        let miss = (c.norm_squared() - b * b).sqrt() - 1.0;
                        assert!(miss <= scene.tolerance, "pixel {u},{v} miss {miss}");
                    }
                    Some(d) => {
                        // the hit point is on the surface; depth itself is only
                        // well conditioned away from the silhouette
                        let hit = dir * (d / dir.z);
                        assert!(scene.distance(&hit).abs() < 10.0 * scene.tolerance, "pixel {u},{v}");
                        if disc > 1e-2 {
                            let t = b - disc.sqrt();
                            assert!((t * dir.z - d).abs() < 1e-4, "pixel {u},{v}");
                        }
                        checked += 1;
                    }
                    None => assert!(disc < 1e-3, "pixel {u},{v} should hit"),
                }
            }
        }
        assert!(checked > 1000);
    }

    #[test]
    fn plane_depth_matches_closed_form() {
        let k = camera();
        let scene = AnalyticScene::new(
            vec![Primitive::Plane {
                point: [0.0, 0.0, 3.0],
                normal: [0.0, -0.3, -1.0],
            }],
            4.0,
        );
        let frame = render_synthetic_depth(&scene, &Pose::identity(), &k, None);
        let n = Vec3::new(0.0, -0.3, -1.0).normalize();
        let p0 = Vec3::new(0.0, 0.0, 3.0);
        for v in 0..k.height {
            for u in 0..k.width {
                let ray = k.ray(u as f64, v as f64);
                let z = n.dot(&p0) / n.dot(&ray);
                let d = frame.depth_at(u, v).unwrap();
                assert!((d - z).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn noise_deviation_is_quadratic_in_depth() {
        let k = camera();
        let model = NoiseModel { sigma0: 0.001, seed: 5 };
        let scene = unit_sphere_scene();
        let pose = Pose::from_translation(Vec3::new(0.0, 0.0, -1.0));
        let frame = render_synthetic_depth(&scene, &pose, &k, Some(model));
        // clean axial depth is 2, so sigma is 0.001 * 4
        let s = frame.sigma_at(40, 30).unwrap();
        assert!((s - 0.004).abs() < 1e-6, "{s}");
        let again = render_synthetic_depth(&scene, &pose, &k, Some(model));
        assert_eq!(frame, again);
    }

    #[test]
    fn cuboid_distance_is_exact_on_axes() {
        let b = Primitive::Cuboid {
            center: [0.0; 3],
            half_extents: [1.0, 2.0, 3.0],
            rotation: [0.0; 3],
        };
        assert!((b.distance(&Vec3::new(2.0, 0.0, 0.0)) - 1.0).abs() < 1e-12);
        assert!((b.distance(&Vec3::new(0.0, 0.0, 0.0)) + 1.0).abs() < 1e-12);
        assert!((b.distance(&Vec3::new(2.0, 3.0, 0.0)) - 2f64.sqrt()).abs() < 1e-12);
    }
}
