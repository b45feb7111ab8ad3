//! Visibility toward the sun from a virtual camera placed along the sun
//! direction, its refinement by Ψ, and the shadow image multiply.

use rayon::prelude::*;

use crate::appearance::ShadowMlp;
use crate::cloud::GaussianCloud;
use crate::error::{Error, Result};
use crate::geom::{orthogonal_up, Pinhole, RigidTransform, Vec3};
use crate::image::Image;
use crate::mlp::Real;
use crate::raster::{
    eval_gaussian_2d, point_grid, project_unclipped, rasterize_forward, RenderOutput, SplatFrame, ALPHA_MAX,
    ALPHA_MIN,
};

/// Bin size (px) for the sun-view occluder lookup.
const SUN_CELL: f64 = 16.0;
const SUN_MAX_CELLS: usize = 256;

/// Virtual camera at `distance · sun` looking back at the object origin.
pub fn sun_camera(sun: &Vec3, distance: f64) -> RigidTransform {
    sun_camera_with_up(sun, distance, &orthogonal_up(sun))
}

pub fn sun_camera_with_up(sun: &Vec3, distance: f64, up: &Vec3) -> RigidTransform {
    let s = sun.normalize();
    RigidTransform::look_at(&(s * distance), &Vec3::zeros(), up)
}

/// Per-Gaussian transmittance toward the sun, in cloud order:
/// `Vᵢ = Π (1 - αⱼ(πμᵢ))` over Gaussians `j` strictly closer to the sun camera.
pub fn sun_visibility(cloud: &GaussianCloud, sun: &Vec3, distance: f64, k: &Pinhole) -> Result<Vec<f64>> {
    sun_visibility_from(cloud, &sun_camera(sun, distance), k)
}

pub fn sun_visibility_from(cloud: &GaussianCloud, pose: &RigidTransform, k: &Pinhole) -> Result<Vec<f64>> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let splats = project_unclipped(cloud, pose, k);
    let grid = point_grid(&splats, SUN_CELL, SUN_MAX_CELLS);
    let per_splat: Vec<(usize, f64)> = splats
        .par_iter()
        .map(|s| {
            let mut v = 1.0;
            if let Some(cell) = grid.cell_of(s.mean) {
                for &j in grid.cell_items(cell) {
                    let o = &splats[j as usize];
                    if o.depth >= s.depth {
                        break;
                    }
                    let g = eval_gaussian_2d(o.conic, [s.mean[0] - o.mean[0], s.mean[1] - o.mean[1]]);
                    let alpha = (o.opacity * g).min(ALPHA_MAX);
                    if alpha >= ALPHA_MIN {
                        v *= 1.0 - alpha;
                    }
                }
            }
            (s.index, v)
        })
        .collect();
    let mut vis = vec![1.0; cloud.len()];
    for (i, v) in per_splat {
        vis[i] = v;
    }
    Ok(vis)
}

/// Means divided by the scene radius, as fed to Ψ.
pub fn normalized_positions(cloud: &GaussianCloud, indices: &[usize], scene_radius: f64) -> Vec<Vec3> {
    indices.iter().map(|&i| cloud.mean(i) / scene_radius).collect()
}

/// `V′ᵢ = Ψ(Vᵢ, γ(sun), γ(μᵢ/r), lᵢ)` for the listed Gaussians.
pub fn refine_visibility<T: Real>(
    vis: &[f64],
    cloud: &GaussianCloud,
    indices: &[usize],
    sun: &Vec3,
    scene_radius: f64,
    psi: &ShadowMlp<T>,
) -> Vec<f64> {
    let v: Vec<f64> = indices.iter().map(|&i| vis[i]).collect();
    let pos = normalized_positions(cloud, indices, scene_radius);
    let lat: Vec<f64> = indices.iter().flat_map(|&i| cloud.latent(i).to_vec()).collect();
    psi.infer(&v, sun, &pos, &lat)
}

/// Splats `refined` (one value per splat, in frame order) into a 1-channel
/// image; pixels without coverage read 1.
pub fn shadow_image(frame: &SplatFrame, refined: &[f64]) -> RenderOutput {
    rasterize_forward(frame, refined, 1, &[1.0])
}

/// `color ⊙ shadow`, broadcasting a 1-channel shadow over the color channels.
pub fn apply_shadow(color: &Image, shadow: &Image) -> Result<Image> {
    check_shadow_shape(color, shadow)?;
    let ch = color.channels;
    let data = color
        .data
        .iter()
        .enumerate()
        .map(|(o, c)| c * shadow.data[o / ch])
        .collect();
    Image::from_data(color.width, color.height, ch, data)
}

/// Returns `(dL/dcolor, dL/dshadow)`.
pub fn apply_shadow_backward(color: &Image, shadow: &Image, d_out: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_shadow_shape(color, shadow)?;
    if d_out.len() != color.data.len() {
        return Err(Error::DimensionMismatch("upstream gradient size".into()));
    }
    let ch = color.channels;
    let d_color = d_out.iter().enumerate().map(|(o, d)| d * shadow.data[o / ch]).collect();
    let mut d_shadow = vec![0.0; shadow.data.len()];
    for (o, d) in d_out.iter().enumerate() {
        d_shadow[o / ch] += d * color.data[o];
    }
    Ok((d_color, d_shadow))
}

fn check_shadow_shape(color: &Image, shadow: &Image) -> Result<()> {
    if color.width != shadow.width || color.height != shadow.height || shadow.channels != 1 {
        return Err(Error::DimensionMismatch(format!(
            "color {}x{} vs shadow {}x{}x{}",
            color.width, color.height, shadow.width, shadow.height, shadow.channels
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{logit, FEATURE_DIM, LATENT_DIM};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scene_k() -> Pinhole {
        Pinhole::new(160.0, 160.0, 64.0, 64.0, 128, 128).unwrap()
    }

    fn cloud_from(means: &[Vec3], scale: f64, opacity: f64) -> GaussianCloud {
        let n = means.len();
        GaussianCloud {
            means: means.iter().flat_map(|m| [m.x, m.y, m.z]).collect(),
            log_scales: vec![scale.ln(); 3 * n],
            rotations: (0..n).flat_map(|_| [1.0, 0.0, 0.0, 0.0]).collect(),
            opacity_logits: vec![logit(opacity); n],
            features: vec![0.0; FEATURE_DIM * n],
            latents: vec![0.0; LATENT_DIM * n],
            colors: None,
        }
    }

    #[test]
    fn sun_camera_looks_back_along_sun() {
        let sun = Vec3::new(0.3, -0.5, 0.8).normalize();
        let cam = sun_camera(&sun, 7.0);
        assert!((cam.camera_center() - sun * 7.0).norm() < 1e-9);
        let boresight = cam.rotation_matrix().transpose() * Vec3::z();
        assert!((boresight.dot(&sun) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn lone_gaussian_is_lit() {
        let c = cloud_from(&[Vec3::new(0.1, 0.2, 0.3)], 0.1, 0.9);
        assert_eq!(sun_visibility(&c, &Vec3::z(), 8.0, &scene_k()).unwrap(), vec![1.0]);
        assert!(matches!(
            sun_visibility(&GaussianCloud::default(), &Vec3::z(), 8.0, &scene_k()),
            Err(Error::EmptyCloud)
        ));
    }

    #[test]
    fn opaque_occluder_darkens_rear() {
        let sun = Vec3::new(1.0, 1.0, 0.0).normalize();
        let c = cloud_from(&[sun * 0.5, Vec3::zeros()], 0.1, 0.9999);
        let v = sun_visibility(&c, &sun, 8.0, &scene_k()).unwrap();
        assert_eq!(v[0], 1.0);
        assert!(v[1] <= 0.02, "{}", v[1]);
    }

    #[test]
    fn invariant_to_up_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let means: Vec<Vec3> = (0..40)
            .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let c = cloud_from(&means, 0.2, 0.6);
        let sun = Vec3::new(0.2, 0.9, -0.3).normalize();
        let k = scene_k();
        let a = sun_visibility(&c, &sun, 9.0, &k).unwrap();
        let up2 = sun.cross(&Vec3::new(0.5, 0.1, 0.7)).normalize();
        let b = sun_visibility_from(&c, &sun_camera_with_up(&sun, 9.0, &up2), &k).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn extra_occluder_never_brightens() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let sun = Vec3::new(-0.4, 0.3, 0.85).normalize();
        for _ in 0..20 {
            let means: Vec<Vec3> = (0..15)
                .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let c = cloud_from(&means, 0.15, 0.7);
            let before = sun_visibility(&c, &sun, 9.0, &scene_k()).unwrap();
            let target = rng.random_range(0..15);
            let mut more = means.clone();
            more.push(means[target] + sun * 0.3);
            let after = sun_visibility(&cloud_from(&more, 0.15, 0.7), &sun, 9.0, &scene_k()).unwrap();
            assert!(after[target] <= before[target]);
        }
    }

    #[test]
    fn zero_psi_gives_half() {
        let c = cloud_from(&[Vec3::zeros(), Vec3::x()], 0.1, 0.5);
        let psi = ShadowMlp::<f64>::zeros();
        let r = refine_visibility(&[0.2, 0.9], &c, &[0, 1], &Vec3::z(), 2.0, &psi);
        assert_eq!(r, vec![0.5, 0.5]);
    }

    #[test]
    fn shadow_multiply_examples() {
        let color = Image::from_data(2, 1, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let ones = Image::filled(2, 1, 1, 1.0);
        assert_eq!(apply_shadow(&color, &ones).unwrap(), color);
        let zeros = Image::filled(2, 1, 1, 0.0);
        assert!(apply_shadow(&color, &zeros).unwrap().data.iter().all(|v| *v == 0.0));
        assert!(matches!(
            apply_shadow(&color, &Image::filled(1, 1, 1, 1.0)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn uncovered_shadow_pixels_read_one() {
        let frame = SplatFrame::from_splats(Vec::new(), 8, 8);
        let out = shadow_image(&frame, &[]);
        assert!(out.color.iter().all(|v| *v == 1.0));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn visibility_is_a_transmittance(
            pts in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 1..30),
            scale in 0.02f64..0.4,
            opacity in 0.01f64..0.999,
            sun in (-1.0f64..1.0, -1.0f64..1.0, 0.1f64..1.0),
        ) {
            let means: Vec<Vec3> = pts.iter().map(|p| Vec3::new(p.0, p.1, p.2)).collect();
            let c = cloud_from(&means, scale, opacity);
            let sun = Vec3::new(sun.0, sun.1, sun.2).normalize();
            let v = sun_visibility(&c, &sun, 8.0, &scene_k()).unwrap();
            proptest::prop_assert_eq!(v.len(), means.len());
            proptest::prop_assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
            // the Gaussian nearest the sun is never shadowed
            let front = (0..means.len())
                .max_by(|&a, &b| means[a].dot(&sun).total_cmp(&means[b].dot(&sun)))
                .unwrap();
            let cam = sun_camera(&sun, 8.0);
            let nearest = (0..means.len())
                .min_by(|&a, &b| cam.apply(&means[a]).z.total_cmp(&cam.apply(&means[b]).z))
                .unwrap();
            proptest::prop_assert_eq!(v[nearest], 1.0);
            let _ = front;
        }
    }
}
