//! Camera path around a tumbling target and random evaluation poses.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::geom::{Quat, RigidTransform, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectoryConfig {
    /// Lissajous amplitudes (m): `r(t) = (A cos ωt, B sin 2ωt + y0, C sin ωt)`.
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub y0: f64,
    /// Number of closed loops over the whole sequence.
    pub loops: f64,
    /// Target spin rate about its x axis, degrees per second.
    pub tumble_rate_deg: f64,
    /// Seconds between frames.
    pub frame_interval: f64,
    pub frames: usize,
    /// Sun direction in the inertial frame (normalized on use).
    pub sun_inertial: [f64; 3],
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig {
            a: 8.0,
            b: 2.0,
            c: 6.5,
            y0: 0.5,
            loops: 2.0,
            tumble_rate_deg: 2.0,
            frame_interval: 5.0,
            frames: 360,
            sun_inertial: [0.4, 0.55, 0.73],
        }
    }
}

/// Pose of one frame plus the sun in the object frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FramePose {
    pub pose: RigidTransform,
    pub sun: Vec3,
}

impl TrajectoryConfig {
    pub fn omega(&self) -> f64 {
        2.0 * PI * self.loops / (self.frames.max(1) as f64 * self.frame_interval)
    }

    pub fn camera_inertial(&self, t: f64) -> Vec3 {
        let w = self.omega() * t;
        Vec3::new(self.a * w.cos(), self.b * (2.0 * w).sin() + self.y0, self.c * w.sin())
    }

    /// Object-to-inertial attitude at time `t`.
    pub fn tumble(&self, t: f64) -> Quat {
        Quat::from_axis_angle(&Vec3::x(), (self.tumble_rate_deg * t).to_radians())
    }

    pub fn sun_inertial(&self) -> Vec3 {
        Vec3::from(self.sun_inertial).normalize()
    }

    pub fn frame(&self, index: usize) -> FramePose {
        let t = index as f64 * self.frame_interval;
        let cam = RigidTransform::look_at(&self.camera_inertial(t), &Vec3::zeros(), &Vec3::y());
        let q = self.tumble(t);
        let obj_to_inertial = RigidTransform::new(q, Vec3::zeros());
        FramePose {
            pose: cam.compose(&obj_to_inertial),
            sun: q.conjugate().rotate(&self.sun_inertial()),
        }
    }

    /// Closest camera approach to the object origin over the sequence.
    pub fn min_distance(&self) -> f64 {
        (0..self.frames)
            .map(|i| self.camera_inertial(i as f64 * self.frame_interval).norm())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Angle (degrees) beyond which a view looking toward the sun is rejected.
pub const MAX_SUN_VIEW_ANGLE_DEG: f64 = 170.0;

/// Random camera on a sphere shell looking at the origin with random roll,
/// and a uniform sun, in the object frame.
pub fn random_eval_pose(rng: &mut impl Rng, radius: (f64, f64)) -> FramePose {
    let cos_max = MAX_SUN_VIEW_ANGLE_DEG.to_radians().cos();
    loop {
        let dir = Vec3::from(UnitSphere.sample(rng));
        let dist = rng.random_range(radius.0..radius.1);
        let sun = Vec3::from(UnitSphere.sample(rng));
        let roll = Vec3::from(UnitSphere.sample(rng));
        let up = roll - dir * roll.dot(&dir);
        if up.norm() < 1e-3 || dir.dot(&sun) < cos_max {
            continue;
        }
        return FramePose {
            pose: RigidTransform::look_at(&(dir * dist), &Vec3::zeros(), &up.normalize()),
            sun,
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::mesh::TargetMesh;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn consecutive_frames_tumble_ten_degrees_about_x() {
        let cfg = TrajectoryConfig::default();
        for i in [0, 17, 200] {
            let q0 = cfg.tumble(i as f64 * cfg.frame_interval);
            let q1 = cfg.tumble((i + 1) as f64 * cfg.frame_interval);
            let rel = q1.mul(q0.conjugate());
            let angle = 2.0 * rel.w.abs().min(1.0).acos();
            assert!((angle.to_degrees() - 10.0).abs() < 1e-9);
            let axis = Vec3::new(rel.x, rel.y, rel.z).normalize() * rel.w.signum();
            assert!((axis - Vec3::x()).norm() < 1e-9);
        }
    }

    #[test]
    fn sun_is_inertial_sun_in_object_frame() {
        let cfg = TrajectoryConfig::default();
        for i in 0..cfg.frames {
            let f = cfg.frame(i);
            let q = cfg.tumble(i as f64 * cfg.frame_interval);
            let back = q.rotate(&f.sun);
            assert!((back - cfg.sun_inertial()).norm() < 1e-12);
            assert!((f.sun.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn camera_stays_outside_target() {
        let cfg = TrajectoryConfig::default();
        assert!(cfg.min_distance() > TargetMesh::canonical().bounding_radius());
    }

    #[test]
    fn camera_looks_at_origin() {
        let cfg = TrajectoryConfig::default();
        let f = cfg.frame(42);
        let p = f.pose.apply(&Vec3::zeros());
        assert!(p.x.abs() < 1e-9 && p.y.abs() < 1e-9 && p.z > 0.0);
    }

    #[test]
    fn eval_poses_respect_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let f = random_eval_pose(&mut rng, (4.0, 12.0));
            let c = f.pose.camera_center();
            assert!((4.0..12.0).contains(&c.norm()));
            assert!(c.normalize().dot(&f.sun) >= MAX_SUN_VIEW_ANGLE_DEG.to_radians().cos());
        }
    }
}
