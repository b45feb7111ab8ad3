//! One primary ray per pixel, Lambertian shading, hard shadows.

use rayon::prelude::*;

use super::mesh::TargetMesh;
use crate::geom::{Pinhole, RigidTransform, Vec3};
use crate::image::Image;

/// Fraction of albedo returned everywhere, lit or not; also the factor on
/// direct light that reaches a point in shadow.
pub const AMBIENT: f64 = 0.05;
/// Offset along the surface normal before casting a shadow ray.
const SHADOW_BIAS: f64 = 1e-6;

/// World-space (object frame) ray through the center of pixel `(x, y)`.
pub fn pixel_ray(pose: &RigidTransform, k: &Pinhole, x: usize, y: usize) -> (Vec3, Vec3) {
    let d_cam = Vec3::new((x as f64 - k.cx) / k.fx, (y as f64 - k.cy) / k.fy, 1.0);
    let dir = (pose.rotation_matrix().transpose() * d_cam).normalize();
    (pose.camera_center(), dir)
}

/// True when the segment from `p` toward the sun hits the mesh.
pub fn in_shadow(mesh: &TargetMesh, p: &Vec3, normal: &Vec3, sun: &Vec3) -> bool {
    let origin = p + normal * SHADOW_BIAS;
    mesh.occluded(&origin, sun, 1e-9, f64::INFINITY)
}

/// `albedo · (max(0, n·s) · v + AMBIENT)` with `v = 1` when the sun is visible
/// and `v = AMBIENT` when it is blocked; clamped to `[0, 1]`.
pub fn shade(mesh: &TargetMesh, tri: usize, p: &Vec3, sun: &Vec3) -> [f64; 3] {
    let t = &mesh.triangles[tri];
    let n = t.normal();
    let cos = n.dot(sun);
    let direct = if cos <= 0.0 {
        0.0
    } else if in_shadow(mesh, p, &n, sun) {
        cos * AMBIENT
    } else {
        cos
    };
    t.albedo.map(|a| (a * (direct + AMBIENT)).clamp(0.0, 1.0))
}

/// Ground-truth color and coverage mask for one view.
pub fn raytrace_frame(mesh: &TargetMesh, pose: &RigidTransform, k: &Pinhole, sun: &Vec3) -> (Image, Vec<bool>) {
    let (w, h) = (k.width as usize, k.height as usize);
    let sun = sun.normalize();
    let px: Vec<([f64; 3], bool)> = (0..w * h)
        .into_par_iter()
        .map(|p| {
            let (origin, dir) = pixel_ray(pose, k, p % w, p / w);
            match mesh.nearest_hit(&origin, &dir) {
                Some(hit) => (shade(mesh, hit.triangle, &(origin + dir * hit.t), &sun), true),
                None => ([0.0; 3], false),
            }
        })
        .collect();
    let mut img = Image::new(w, h, 3);
    let mut mask = vec![false; w * h];
    for (p, (c, m)) in px.into_iter().enumerate() {
        img.data[3 * p..3 * p + 3].copy_from_slice(&c);
        mask[p] = m;
    }
    (img, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::mesh::{BODY_ALBEDO, PANEL_BACK_ALBEDO};

    fn k() -> Pinhole {
        Pinhole::new(160.0, 160.0, 64.0, 64.0, 128, 128).unwrap()
    }

    #[test]
    fn lit_face_gets_full_lambert() {
        let mesh = TargetMesh::canonical();
        // bus -x face seen head-on, sun along its normal
        let pose = RigidTransform::look_at(&Vec3::new(-6.0, 0.0, 0.0), &Vec3::zeros(), &Vec3::y());
        let (img, mask) = raytrace_frame(&mesh, &pose, &k(), &(-Vec3::x()));
        assert!(mask[64 * 128 + 64]);
        for c in 0..3 {
            let expect = (BODY_ALBEDO[c] * 1.05).min(1.0);
            assert!((img.get(64, 64, c) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn backlit_face_is_ambient() {
        let mesh = TargetMesh::canonical();
        let pose = RigidTransform::look_at(&Vec3::new(-6.0, 0.0, 0.0), &Vec3::zeros(), &Vec3::y());
        let (img, _) = raytrace_frame(&mesh, &pose, &k(), &Vec3::x());
        for c in 0..3 {
            assert!((img.get(64, 64, c) - BODY_ALBEDO[c] * AMBIENT).abs() < 1e-12);
        }
        // background stays black and unmasked
        let (img, mask) = raytrace_frame(&mesh, &pose, &k(), &Vec3::x());
        assert!(!mask[0] && img.data[..3].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn bus_shadows_panel_back() {
        let mesh = TargetMesh::canonical();
        // grazing sun from -y: the bus hides the root of the panel's -z face
        let sun = Vec3::new(0.0, -1.0, -0.25).normalize();
        let p = Vec3::new(0.0, 0.5, -0.01);
        let n = -Vec3::z();
        assert!(n.dot(&sun) > 0.0);
        assert!(in_shadow(&mesh, &p, &n, &sun));
        let tri = mesh
            .triangles
            .iter()
            .position(|t| t.albedo == PANEL_BACK_ALBEDO && t.normal().z < -0.5)
            .unwrap();
        let c = shade(&mesh, tri, &p, &sun);
        let cos = n.dot(&sun);
        for a in 0..3 {
            assert!((c[a] - PANEL_BACK_ALBEDO[a] * (cos * AMBIENT + AMBIENT)).abs() < 1e-12);
        }
    }
}
