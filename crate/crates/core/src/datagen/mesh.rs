//! Procedural target: a box bus with one thin solar panel on its +y side.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Triangle {
    pub v: [[f64; 3]; 3],
    pub albedo: [f64; 3],
}

impl Triangle {
    pub fn vertex(&self, k: usize) -> Vec3 {
        Vec3::from(self.v[k])
    }

    /// Unit normal from counter-clockwise winding.
    pub fn normal(&self) -> Vec3 {
        let (a, b, c) = (self.vertex(0), self.vertex(1), self.vertex(2));
        (b - a).cross(&(c - a)).normalize()
    }

    pub fn area(&self) -> f64 {
        let (a, b, c) = (self.vertex(0), self.vertex(1), self.vertex(2));
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Möller–Trumbore; returns the ray parameter of a hit with `t > t_min`.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3, t_min: f64) -> Option<f64> {
        let (a, b, c) = (self.vertex(0), self.vertex(1), self.vertex(2));
        let e1 = b - a;
        let e2 = c - a;
        let p = dir.cross(&e2);
        let det = e1.dot(&p);
        if det.abs() < 1e-14 {
            return None;
        }
        let inv = 1.0 / det;
        let s = origin - a;
        let u = s.dot(&p) * inv;
        if !(0.0..=1.0).contains(&u) {
            return None;
        }
        let q = s.cross(&e1);
        let v = dir.dot(&q) * inv;
        if v < 0.0 || u + v > 1.0 {
            return None;
        }
        let t = e2.dot(&q) * inv;
        (t > t_min).then_some(t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetMesh {
    pub triangles: Vec<Triangle>,
}

#[derive(Clone, Copy, Debug)]
pub struct Hit {
    pub t: f64,
    pub triangle: usize,
}

pub const BODY_ALBEDO: [f64; 3] = [0.85, 0.65, 0.3];
pub const PANEL_FRONT_ALBEDO: [f64; 3] = [0.2, 0.3, 0.75];
pub const PANEL_BACK_ALBEDO: [f64; 3] = [0.6, 0.6, 0.6];

impl TargetMesh {
    /// Bus `1.0 × 0.6 × 0.6` centered at the origin; panel 0.8 (x) by 2.4 (y)
    /// by 0.02 (z), starting 0.05 past the bus's +y face. The panel's +z face
    /// and the remaining panel faces carry different albedos.
    pub fn canonical() -> Self {
        let mut tris = Vec::new();
        push_box(&mut tris, [-0.5, -0.3, -0.3], [0.5, 0.3, 0.3], |_| BODY_ALBEDO);
        push_box(&mut tris, [-0.4, 0.35, -0.01], [0.4, 2.75, 0.01], |n| {
            if n[2] > 0.5 {
                PANEL_FRONT_ALBEDO
            } else {
                PANEL_BACK_ALBEDO
            }
        });
        TargetMesh { triangles: tris }
    }

    pub fn bounding_radius(&self) -> f64 {
        self.triangles
            .iter()
            .flat_map(|t| t.v.iter())
            .map(|v| Vec3::from(*v).norm())
            .fold(0.0, f64::max)
    }

    pub fn total_area(&self) -> f64 {
        self.triangles.iter().map(Triangle::area).sum()
    }

    pub fn nearest_hit(&self, origin: &Vec3, dir: &Vec3) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (i, tri) in self.triangles.iter().enumerate() {
            if let Some(t) = tri.intersect(origin, dir, 1e-9) {
                if best.is_none_or(|b| t < b.t) {
                    best = Some(Hit { t, triangle: i });
                }
            }
        }
        best
    }

    /// True when the ray hits anything with `t_min < t < t_max`.
    pub fn occluded(&self, origin: &Vec3, dir: &Vec3, t_min: f64, t_max: f64) -> bool {
        self.triangles
            .iter()
            .any(|tri| tri.intersect(origin, dir, t_min).is_some_and(|t| t < t_max))
    }

    /// Area-weighted uniform samples; returns points and their triangle ids.
    pub fn sample_surface(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<(Vec3, usize)>> {
        let areas: Vec<f64> = self.triangles.iter().map(Triangle::area).collect();
        let total: f64 = areas.iter().sum();
        if !(total > 0.0) {
            return Err(Error::DegenerateMesh);
        }
        let mut cdf = Vec::with_capacity(areas.len());
        let mut acc = 0.0;
        for a in &areas {
            acc += a / total;
            cdf.push(acc);
        }
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let r: f64 = rng.random();
            let ti = cdf.partition_point(|c| *c < r).min(areas.len() - 1);
            let tri = &self.triangles[ti];
            let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
            if u + v > 1.0 {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            let p = tri.vertex(0) + (tri.vertex(1) - tri.vertex(0)) * u + (tri.vertex(2) - tri.vertex(0)) * v;
            out.push((p, ti));
        }
        Ok(out)
    }
}

/// Twelve outward-wound triangles of an axis-aligned box.
fn push_box(out: &mut Vec<Triangle>, lo: [f64; 3], hi: [f64; 3], albedo: impl Fn([f64; 3]) -> [f64; 3]) {
    for axis in 0..3 {
        for side in [0, 1] {
            let (u, w) = ((axis + 1) % 3, (axis + 2) % 3);
            let fixed = if side == 0 { lo[axis] } else { hi[axis] };
            let corner = |a: f64, b: f64| {
                let mut p = [0.0; 3];
                p[axis] = fixed;
                p[u] = a;
                p[w] = b;
                p
            };
            let q = [
                corner(lo[u], lo[w]),
                corner(hi[u], lo[w]),
                corner(hi[u], hi[w]),
                corner(lo[u], hi[w]),
            ];
            let mut n = [0.0; 3];
            n[axis] = if side == 0 { -1.0 } else { 1.0 };
            let alb = albedo(n);
            // (u, w, axis) is right-handed, so q winds counter-clockwise about +axis
            let quads = if side == 1 {
                [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]
            } else {
                [[q[0], q[2], q[1]], [q[0], q[3], q[2]]]
            };
            for v in quads {
                out.push(Triangle { v, albedo: alb });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn canonical_normals_point_outward() {
        let m = TargetMesh::canonical();
        assert_eq!(m.triangles.len(), 24);
        for (k, t) in m.triangles.iter().enumerate() {
            let c = (t.vertex(0) + t.vertex(1) + t.vertex(2)) / 3.0;
            let center = if k < 12 { Vec3::zeros() } else { Vec3::new(0.0, 1.55, 0.0) };
            assert!(t.normal().dot(&(c - center)) > 0.0, "triangle {k}");
        }
        assert!((m.bounding_radius() - (0.4f64.powi(2) + 2.75f64.powi(2) + 0.01f64.powi(2)).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn body_is_closed() {
        // every ray from inside the bus leaves through exactly one face
        let m = TargetMesh::canonical();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let d = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
            let hits = m.triangles[..12]
                .iter()
                .filter(|t| t.intersect(&Vec3::new(0.01, 0.02, -0.03), &d, 0.0).is_some())
                .count();
            assert!(hits >= 1);
        }
    }

    #[test]
    fn single_triangle_samples_stay_inside() {
        let m = TargetMesh {
            triangles: vec![Triangle {
                v: [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
                albedo: [1.0; 3],
            }],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = m.sample_surface(1000, &mut rng).unwrap();
        assert_eq!(pts.len(), 1000);
        for (p, _) in pts {
            assert!(p.x >= 0.0 && p.y >= 0.0 && p.x + p.y <= 1.0 + 1e-12 && p.z == 0.0);
        }
    }

    #[test]
    fn area_ratio_sampling() {
        let tri = |s: f64, z: f64| Triangle {
            v: [[0.0, 0.0, z], [s, 0.0, z], [0.0, s, z]],
            albedo: [1.0; 3],
        };
        let m = TargetMesh {
            triangles: vec![tri(1.0, 0.0), tri(3f64.sqrt(), 1.0)],
        };
        let n = 40_000;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts = m.sample_surface(n, &mut rng).unwrap();
        let first = pts.iter().filter(|(_, t)| *t == 0).count() as f64;
        let p = 0.25;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((first - n as f64 * p).abs() < 3.0 * sd, "{first}");
    }

    #[test]
    fn degenerate_mesh_rejected() {
        let m = TargetMesh {
            triangles: vec![Triangle {
                v: [[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]],
                albedo: [1.0; 3],
            }],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(matches!(m.sample_surface(5, &mut rng), Err(Error::DegenerateMesh)));
    }
}
