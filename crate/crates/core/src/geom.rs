//! Small-matrix geometry shared by every stage: quaternions, rigid transforms,
//! the pinhole camera, the covariance factorization and its EWA splat, each
//! paired with its reverse-mode derivative.
//!
//! All matrices are treated as general (non-symmetric) when differentiating:
//! a gradient `G` with respect to a symmetric matrix holds `dL/dM_ab` for every
//! entry independently.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Mat2 = Matrix2<f64>;
pub type Mat23 = Matrix2x3<f64>;

/// Points closer than this (camera-frame z, meters) are culled.
pub const Z_NEAR: f64 = 1e-4;
/// Diagonal dilation added to every splatted covariance, in px².
pub const SPLAT_DILATION: f64 = 0.3;
/// Splats whose dilated determinant falls below this are degenerate.
pub const MIN_SPLAT_DET: f64 = 1e-12;

/// Rotation quaternion `(w, x, y, z)`, kept at unit norm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Builds a quaternion and renormalizes it. A zero input yields identity.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Self::IDENTITY;
        }
        Quat {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        }
    }

    pub fn from_array(q: [f64; 4]) -> Self {
        Self::new(q[0], q[1], q[2], q[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let a = axis.normalize();
        let (s, c) = (0.5 * angle).sin_cos();
        Self::new(c, a.x * s, a.y * s, a.z * s)
    }

    pub fn from_rotmat(m: &Mat3) -> Self {
        let uq = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*m));
        Self::new(uq.w, uq.i, uq.j, uq.k)
    }

    /// Hamilton product `self * rhs` (apply `rhs` first).
    pub fn mul(self, rhs: Quat) -> Quat {
        let (a, b) = (self, rhs);
        Quat::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }

    pub fn conjugate(self) -> Quat {
        Quat {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn to_rotmat(self) -> Mat3 {
        quat_to_rotmat(self.to_array())
    }

    pub fn rotate(self, v: &Vec3) -> Vec3 {
        self.to_rotmat() * v
    }
}

/// Rotation matrix of a (possibly unnormalized) quaternion `[w, x, y, z]`.
pub fn quat_to_rotmat(q: [f64; 4]) -> Mat3 {
    let Quat { w, x, y, z } = Quat::from_array(q);
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls `dL/dR` back to the raw (pre-normalization) quaternion components.
pub fn quat_to_rotmat_backward(q: [f64; 4], d_r: &Mat3) -> [f64; 4] {
    let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if !(norm > 0.0) {
        return [0.0; 4];
    }
    let Quat { w, x, y, z } = Quat::from_array(q);
    let g = |m: Mat3| d_r.component_mul(&m).sum();
    let dw = g(Mat3::new(
        0.0, -2.0 * z, 2.0 * y, 2.0 * z, 0.0, -2.0 * x, -2.0 * y, 2.0 * x, 0.0,
    ));
    let dx = g(Mat3::new(
        0.0,
        2.0 * y,
        2.0 * z,
        2.0 * y,
        -4.0 * x,
        -2.0 * w,
        2.0 * z,
        2.0 * w,
        -4.0 * x,
    ));
    let dy = g(Mat3::new(
        -4.0 * y,
        2.0 * x,
        2.0 * w,
        2.0 * x,
        0.0,
        2.0 * z,
        -2.0 * w,
        2.0 * z,
        -4.0 * y,
    ));
    let dz = g(Mat3::new(
        -4.0 * z,
        -2.0 * w,
        2.0 * x,
        2.0 * w,
        -4.0 * z,
        2.0 * y,
        2.0 * x,
        2.0 * y,
        0.0,
    ));
    // through q / |q|
    let unit = [w, x, y, z];
    let grad = [dw, dx, dy, dz];
    let dot: f64 = unit.iter().zip(grad.iter()).map(|(a, b)| a * b).sum();
    let mut out = [0.0; 4];
    for k in 0..4 {
        out[k] = (grad[k] - unit[k] * dot) / norm;
    }
    out
}

/// Per-axis Gaussian scale, stored as logs so that any real value is valid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaleVec {
    pub log: Vec3,
}

impl ScaleVec {
    pub fn from_log(log: Vec3) -> Self {
        ScaleVec { log }
    }

    pub fn from_values(s: Vec3) -> Self {
        ScaleVec {
            log: s.map(f64::ln),
        }
    }

    pub fn values(&self) -> Vec3 {
        self.log.map(f64::exp)
    }
}

/// Pinhole intrinsics in pixels. Pixel `(i, j)` is centered at `u = i, v = j`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pinhole {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Pinhole {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = Pinhole {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidIntrinsics("empty image".into()));
        }
        if !(0.0 <= self.cx && self.cx < self.width as f64)
            || !(0.0 <= self.cy && self.cy < self.height as f64)
        {
            return Err(Error::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{}",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Rigid map `p ↦ R p + t` from the object frame to a camera frame
/// (x right, y down, z along the boresight).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Quat,
    pub translation: Vec3,
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        rotation: Quat::IDENTITY,
        translation: Vector3::new(0.0, 0.0, 0.0),
    };

    pub fn new(rotation: Quat, translation: Vec3) -> Self {
        RigidTransform {
            rotation,
            translation,
        }
    }

    /// Camera at `eye` looking at `target`; `up` sets the image's upward direction.
    pub fn look_at(eye: &Vec3, target: &Vec3, up: &Vec3) -> Self {
        let z = (target - eye).normalize();
        let x = z.cross(up).normalize();
        let y = z.cross(&x);
        let r = Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        RigidTransform {
            rotation: Quat::from_rotmat(&r),
            translation: -(r * eye),
        }
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        self.rotation.to_rotmat()
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation_matrix() * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let r_inv = self.rotation.conjugate();
        RigidTransform {
            rotation: r_inv,
            translation: -(r_inv.to_rotmat() * self.translation),
        }
    }

    /// `self ∘ rhs`: applies `rhs` first.
    pub fn compose(&self, rhs: &RigidTransform) -> Self {
        RigidTransform {
            rotation: self.rotation.mul(rhs.rotation),
            translation: self.rotation_matrix() * rhs.translation + self.translation,
        }
    }

    /// Camera center in the source (object) frame.
    pub fn camera_center(&self) -> Vec3 {
        -(self.rotation_matrix().transpose() * self.translation)
    }
}

/// Projects an object-frame point; returns `(u, v, depth)`.
pub fn project_point(p_obj: &Vec3, pose: &RigidTransform, k: &Pinhole) -> Result<(f64, f64, f64)> {
    project_camera_point(&pose.apply(p_obj), k)
}

pub fn project_camera_point(p: &Vec3, k: &Pinhole) -> Result<(f64, f64, f64)> {
    if p.z <= Z_NEAR {
        return Err(Error::BehindCamera { z: p.z });
    }
    Ok((k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy, p.z))
}

/// Jacobian of `(u, v)` with respect to the camera-frame point.
pub fn projection_jacobian(p: &Vec3, k: &Pinhole) -> Result<Mat23> {
    if p.z <= Z_NEAR {
        return Err(Error::BehindCamera { z: p.z });
    }
    let iz = 1.0 / p.z;
    let iz2 = iz * iz;
    Ok(Mat23::new(
        k.fx * iz,
        0.0,
        -k.fx * p.x * iz2,
        0.0,
        k.fy * iz,
        -k.fy * p.y * iz2,
    ))
}

/// `dL/dp` given `dL/dJ` for the projection Jacobian evaluated at `p`.
pub fn projection_jacobian_backward(p: &Vec3, k: &Pinhole, d_j: &Mat23) -> Vec3 {
    let iz = 1.0 / p.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    Vec3::new(
        -k.fx * iz2 * d_j[(0, 2)],
        -k.fy * iz2 * d_j[(1, 2)],
        -k.fx * iz2 * d_j[(0, 0)] + 2.0 * k.fx * p.x * iz3 * d_j[(0, 2)]
            - k.fy * iz2 * d_j[(1, 1)]
            + 2.0 * k.fy * p.y * iz3 * d_j[(1, 2)],
    )
}

/// `Σ = R S Sᵀ Rᵀ` with `S = diag(s)`.
pub fn build_covariance(q: [f64; 4], s: &Vec3) -> Mat3 {
    let m = quat_to_rotmat(q) * Mat3::from_diagonal(s);
    m * m.transpose()
}

/// Returns `(dL/dq, dL/ds)` for [`build_covariance`].
pub fn build_covariance_backward(q: [f64; 4], s: &Vec3, d_sigma: &Mat3) -> ([f64; 4], Vec3) {
    let r = quat_to_rotmat(q);
    let m = r * Mat3::from_diagonal(s);
    let d_m = (d_sigma + d_sigma.transpose()) * m;
    let mut d_s = Vec3::zeros();
    let mut d_r = Mat3::zeros();
    for i in 0..3 {
        for k in 0..3 {
            d_s[k] += d_m[(i, k)] * r[(i, k)];
            d_r[(i, k)] = d_m[(i, k)] * s[k];
        }
    }
    (quat_to_rotmat_backward(q, &d_r), d_s)
}

/// Upper-left 2×2 of `J W Σ Wᵀ Jᵀ`, dilated by [`SPLAT_DILATION`].
pub fn splat_covariance(sigma: &Mat3, w_rot: &Mat3, j: &Mat23) -> Result<Mat2> {
    let t = j * w_rot;
    let mut cov = t * sigma * t.transpose();
    let off = 0.5 * (cov[(0, 1)] + cov[(1, 0)]);
    cov[(0, 1)] = off;
    cov[(1, 0)] = off;
    cov[(0, 0)] += SPLAT_DILATION;
    cov[(1, 1)] += SPLAT_DILATION;
    let det = cov.determinant();
    if !(det > MIN_SPLAT_DET) || !det.is_finite() {
        return Err(Error::Degenerate { det });
    }
    Ok(cov)
}

/// Returns `(dL/dΣ, dL/dJ)` for [`splat_covariance`].
pub fn splat_covariance_backward(
    sigma: &Mat3,
    w_rot: &Mat3,
    j: &Mat23,
    d_cov: &Mat2,
) -> (Mat3, Mat23) {
    let t = j * w_rot;
    let d_cov = &(0.5 * (d_cov + d_cov.transpose()));
    let d_sigma = t.transpose() * d_cov * t;
    let d_t = d_cov * t * sigma.transpose() + d_cov.transpose() * t * sigma;
    (d_sigma, d_t * w_rot.transpose())
}

/// Inverse of a symmetric 2×2 as `(a, b, c)` for `[[a, b], [b, c]]`.
pub fn conic_of(cov: &Mat2) -> [f64; 3] {
    let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
    let inv = 1.0 / det;
    [cov[(1, 1)] * inv, -cov[(0, 1)] * inv, cov[(0, 0)] * inv]
}

/// `dL/dcov` given gradients on the conic scalars `(a, b, c)`.
pub fn conic_backward(cov: &Mat2, d_conic: [f64; 3]) -> Mat2 {
    let [a, b, c] = conic_of(cov);
    let inv = Mat2::new(a, b, b, c);
    let g = Mat2::new(d_conic[0], 0.5 * d_conic[1], 0.5 * d_conic[1], d_conic[2]);
    -(inv.transpose() * g * inv.transpose())
}

/// Largest eigenvalue of a symmetric 2×2.
pub fn max_eigenvalue_sym2(cov: &Mat2) -> f64 {
    let mid = 0.5 * (cov[(0, 0)] + cov[(1, 1)]);
    let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(0, 1)];
    mid + (mid * mid - det).max(0.0).sqrt()
}

/// Unit vector orthogonal to `dir`, built from the axis where `dir` is smallest.
pub fn orthogonal_up(dir: &Vec3) -> Vec3 {
    let a = dir.abs();
    let axis = if a.x <= a.y && a.x <= a.z {
        Vec3::x()
    } else if a.y <= a.z {
        Vec3::y()
    } else {
        Vec3::z()
    };
    (axis - dir * axis.dot(dir)).normalize()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_quat(rng: &mut impl Rng) -> Quat {
        Quat::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
    }

    fn k100() -> Pinhole {
        Pinhole::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap()
    }

    #[test]
    fn identity_quaternion_is_identity_matrix() {
        assert_eq!(Quat::IDENTITY.to_rotmat(), Mat3::identity());
    }

    #[test]
    fn quarter_turn_about_x() {
        let h = 0.5f64.sqrt();
        let r = quat_to_rotmat([h, h, 0.0, 0.0]);
        let v = r * Vec3::new(0.0, 1.0, 0.0);
        assert_relative_eq!(v, Vec3::new(0.0, 0.0, 1.0), epsilon = 1e-15);
    }

    #[test]
    fn random_rotations_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let q = random_quat(&mut rng);
            let r = q.to_rotmat();
            assert!((r.transpose() * r - Mat3::identity()).abs().max() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
            // q and -q give the same rotation
            let neg = quat_to_rotmat([-q.w, -q.x, -q.y, -q.z]);
            assert!((neg - r).abs().max() < 1e-15);
        }
    }

    #[test]
    fn covariance_examples() {
        let i = build_covariance(Quat::IDENTITY.to_array(), &Vec3::new(1.0, 1.0, 1.0));
        assert_relative_eq!(i, Mat3::identity(), epsilon = 1e-15);
        let d = build_covariance(Quat::IDENTITY.to_array(), &Vec3::new(2.0, 1.0, 1.0));
        assert_relative_eq!(d, Mat3::from_diagonal(&Vec3::new(4.0, 1.0, 1.0)), epsilon = 1e-15);
    }

    #[test]
    fn covariance_eigenvalues_are_squared_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let q = random_quat(&mut rng);
            let s = Vec3::new(
                rng.random_range(0.1..3.0),
                rng.random_range(0.1..3.0),
                rng.random_range(0.1..3.0),
            );
            let sigma = build_covariance(q.to_array(), &s);
            assert!((sigma - sigma.transpose()).abs().max() < 1e-12);
            let mut eig: Vec<f64> = sigma.symmetric_eigenvalues().iter().copied().collect();
            let mut want: Vec<f64> = s.iter().map(|v| v * v).collect();
            eig.sort_by(f64::total_cmp);
            want.sort_by(f64::total_cmp);
            for (a, b) in eig.iter().zip(&want) {
                assert!((a - b).abs() < 1e-9, "{eig:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn covariance_is_rotation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let q1 = random_quat(&mut rng);
            let q2 = random_quat(&mut rng);
            let s = Vec3::new(0.3, 1.2, 2.0);
            let lhs = build_covariance(q2.mul(q1).to_array(), &s);
            let r2 = q2.to_rotmat();
            let rhs = r2 * build_covariance(q1.to_array(), &s) * r2.transpose();
            assert!((lhs - rhs).abs().max() < 1e-9);
        }
    }

    #[test]
    fn projection_examples() {
        let k = k100();
        let id = RigidTransform::IDENTITY;
        let (u, v, d) = project_point(&Vec3::new(0.0, 0.0, 10.0), &id, &k).unwrap();
        assert_eq!((u, v, d), (50.0, 50.0, 10.0));
        let (u, v, d) = project_point(&Vec3::new(1.0, 0.0, 10.0), &id, &k).unwrap();
        assert_relative_eq!(u, 60.0);
        assert_eq!((v, d), (50.0, 10.0));
        assert!(matches!(
            project_point(&Vec3::new(0.0, 0.0, 5e-5), &id, &k),
            Err(Error::BehindCamera { .. })
        ));
    }

    #[test]
    fn projection_matches_homogeneous_coordinates() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let k = Pinhole::new(160.0, 150.0, 64.0, 60.0, 128, 120).unwrap();
        for _ in 0..500 {
            let pose = RigidTransform::new(
                random_quat(&mut rng),
                Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 20.0),
            );
            let p = Vec3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            );
            // [K | 0] [R t; 0 1] [p; 1]
            let r = pose.rotation_matrix();
            let mut ext = nalgebra::Matrix3x4::<f64>::zeros();
            ext.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
            ext.set_column(3, &pose.translation);
            let kmat = Mat3::new(k.fx, 0.0, k.cx, 0.0, k.fy, k.cy, 0.0, 0.0, 1.0);
            let h = kmat * ext * nalgebra::Vector4::new(p.x, p.y, p.z, 1.0);
            let (u, v, d) = project_point(&p, &pose, &k).unwrap();
            assert!((u - h.x / h.z).abs() < 1e-9);
            assert!((v - h.y / h.z).abs() < 1e-9);
            assert!((d - h.z).abs() < 1e-9);
        }
    }

    #[test]
    fn jacobian_examples() {
        let k = k100();
        let j = projection_jacobian(&Vec3::new(0.0, 0.0, 10.0), &k).unwrap();
        assert_relative_eq!(j, Mat23::new(10.0, 0.0, 0.0, 0.0, 10.0, 0.0), epsilon = 1e-12);
        let j = projection_jacobian(&Vec3::new(1.0, 2.0, 5.0), &k).unwrap();
        assert_relative_eq!(j, Mat23::new(20.0, 0.0, -4.0, 0.0, 20.0, -8.0), epsilon = 1e-12);
    }

    #[test]
    fn splat_identity_example() {
        let j = Mat23::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0);
        let c = splat_covariance(&Mat3::identity(), &Mat3::identity(), &j).unwrap();
        assert_relative_eq!(c, Mat2::new(1.3, 0.0, 0.0, 1.3), epsilon = 1e-15);
    }

    #[test]
    fn splat_degenerate_is_reported() {
        // J with zero rows collapses everything; dilation alone gives det 0.09,
        // so use a negative-definite input to push det below the floor.
        let j = Mat23::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0);
        let sigma = Mat3::from_diagonal(&Vec3::new(-0.3, 1.0, 1.0));
        assert!(matches!(
            splat_covariance(&sigma, &Mat3::identity(), &j),
            Err(Error::Degenerate { .. })
        ));
    }

    #[test]
    fn splat_output_is_symmetric_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = Pinhole::new(160.0, 160.0, 64.0, 64.0, 128, 128).unwrap();
        for _ in 0..1000 {
            let q = random_quat(&mut rng);
            let s = Vec3::new(
                rng.random_range(0.01..1.0),
                rng.random_range(0.01..1.0),
                rng.random_range(0.01..1.0),
            );
            let w = random_quat(&mut rng).to_rotmat();
            let p = Vec3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(2.0..10.0),
            );
            let j = projection_jacobian(&p, &k).unwrap();
            let c = splat_covariance(&build_covariance(q.to_array(), &s), &w, &j).unwrap();
            assert_eq!(c[(0, 1)], c[(1, 0)]);
            let e = c.symmetric_eigenvalues();
            assert!(e.min() > 0.0);
        }
    }

    #[test]
    fn rigid_transform_inverse_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let t = RigidTransform::new(
                random_quat(&mut rng),
                Vec3::new(rng.random_range(-5.0..5.0), 1.0, rng.random_range(-5.0..5.0)),
            );
            let id = t.compose(&t.inverse());
            let p = Vec3::new(0.3, -2.0, 4.0);
            assert!((id.apply(&p) - p).norm() < 1e-9);
        }
    }

    #[test]
    fn look_at_points_boresight_at_target() {
        let eye = Vec3::new(3.0, -2.0, 5.0);
        let pose = RigidTransform::look_at(&eye, &Vec3::zeros(), &Vec3::y());
        let c = pose.apply(&Vec3::zeros());
        assert!(c.x.abs() < 1e-12 && c.y.abs() < 1e-12);
        assert_relative_eq!(c.z, eye.norm(), epsilon = 1e-12);
        assert!((pose.camera_center() - eye).norm() < 1e-12);
    }

    #[test]
    fn orthogonal_up_is_unit_and_orthogonal() {
        for d in [Vec3::x(), Vec3::new(0.3, -0.9, 0.1).normalize(), -Vec3::z()] {
            let u = orthogonal_up(&d);
            assert!((u.norm() - 1.0).abs() < 1e-12);
            assert!(u.dot(&d).abs() < 1e-12);
        }
    }

    #[test]
    fn conic_is_inverse() {
        let c = Mat2::new(2.0, 0.3, 0.3, 1.5);
        let [a, b, cc] = conic_of(&c);
        let prod = Mat2::new(a, b, b, cc) * c;
        assert_relative_eq!(prod, Mat2::identity(), epsilon = 1e-14);
    }
}
