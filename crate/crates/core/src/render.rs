//! Full-frame forward and reverse passes for every model configuration.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::appearance::{AppearanceCache, AppearanceMlp, ShadowCache, ShadowMlp};
use crate::cloud::{sigmoid, CloudGrads, GaussianCloud, LATENT_DIM};
use crate::error::{Error, Result};
use crate::geom::{Mat3, Pinhole, RigidTransform, Vec3};
use crate::image::Image;
use crate::mlp::Real;
use crate::raster::{
    cull_and_sort, project_backward, rasterize_backward, rasterize_forward, RenderOutput, SplatFrame,
};
use crate::shadow::{apply_shadow, apply_shadow_backward, normalized_positions, shadow_image, sun_visibility};

/// Ablation ladder: (a) direct RGB, (b) + sun/view appearance network,
/// (c) + shadow pass, (d) + isotropic scale loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfigId {
    A,
    B,
    C,
    D,
}

impl ConfigId {
    pub const ALL: [ConfigId; 4] = [ConfigId::A, ConfigId::B, ConfigId::C, ConfigId::D];

    pub fn uses_appearance(self) -> bool {
        self != ConfigId::A
    }

    pub fn uses_shadow(self) -> bool {
        matches!(self, ConfigId::C | ConfigId::D)
    }

    pub fn uses_iso(self) -> bool {
        self == ConfigId::D
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ConfigId::A => "a",
            ConfigId::B => "b",
            ConfigId::C => "c",
            ConfigId::D => "d",
        }
    }
}

impl fmt::Display for ConfigId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConfigId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "a" => Ok(ConfigId::A),
            "b" => Ok(ConfigId::B),
            "c" => Ok(ConfigId::C),
            "d" => Ok(ConfigId::D),
            other => Err(format!("unknown configuration `{other}` (expected a, b, c or d)")),
        }
    }
}

/// A viewing camera and the sun direction, both in the object frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct View {
    pub pose: RigidTransform,
    pub k: Pinhole,
    pub sun: Vec3,
}

#[derive(Clone, Debug)]
pub struct Model<T = f32> {
    pub config: ConfigId,
    pub cloud: GaussianCloud,
    pub phi: AppearanceMlp<T>,
    pub psi: ShadowMlp<T>,
    pub scene_radius: f64,
    /// Distance of the virtual sun camera from the object origin.
    pub sun_distance: f64,
}

pub struct ShadowRender<T> {
    /// Raw visibility per Gaussian, in cloud order.
    pub visibility: Vec<f64>,
    /// Refined visibility per splat, in frame order.
    pub refined: Vec<f64>,
    pub raster: RenderOutput,
    pub image: Image,
    cache: ShadowCache<T>,
}

pub struct Render<T> {
    /// Final color (shadowed when the configuration has a shadow pass).
    pub image: Image,
    /// Color before the shadow multiply.
    pub color: Image,
    pub raster: RenderOutput,
    pub frame: SplatFrame,
    /// Per-splat RGB in frame order.
    pub payload: Vec<f64>,
    appearance: Option<AppearanceCache<T>>,
    pub shadow: Option<ShadowRender<T>>,
}

impl<T> Render<T> {
    /// Accumulated opacity per pixel.
    pub fn alpha(&self) -> Vec<f64> {
        self.raster.alpha()
    }
}

pub struct ModelGrads<T> {
    pub cloud: CloudGrads,
    pub phi: Vec<T>,
    pub psi: Vec<T>,
    pub psi_gain: f64,
    /// Per Gaussian: norm of the screen-space mean gradient in normalized
    /// device units; `None` when not rendered.
    pub mean2d: Vec<Option<f64>>,
}

impl<T: Real> ModelGrads<T> {
    pub fn zeros(model: &Model<T>) -> Self {
        ModelGrads {
            cloud: CloudGrads::zeros_like(&model.cloud),
            phi: vec![T::zero(); model.phi.net.param_count()],
            psi: vec![T::zero(); model.psi.net.param_count()],
            psi_gain: 0.0,
            mean2d: vec![None; model.cloud.len()],
        }
    }
}

fn view_vectors(cloud: &GaussianCloud, frame: &SplatFrame, center: &Vec3) -> Vec<Vec3> {
    frame
        .splats
        .iter()
        .map(|s| (center - cloud.mean(s.index)).normalize())
        .collect()
}

impl<T: Real> Model<T> {
    pub fn render(&self, view: &View) -> Result<Render<T>> {
        self.render_with_visibility(view, None)
    }

    /// Like [`Model::render`], but takes per-Gaussian sun visibility from
    /// the caller instead of the sun pass when given.
    pub fn render_with_visibility(&self, view: &View, visibility: Option<&[f64]>) -> Result<Render<T>> {
        let cloud = &self.cloud;
        let frame = cull_and_sort(cloud, &view.pose, &view.k);
        let (payload, appearance) = if self.config.uses_appearance() {
            let views = view_vectors(cloud, &frame, &view.pose.camera_center());
            let feats: Vec<f64> = frame.splats.iter().flat_map(|s| cloud.feature(s.index).to_vec()).collect();
            let (c, cache) = self.phi.forward(&feats, &view.sun, &views);
            (c, Some(cache))
        } else {
            let colors = cloud.colors.as_ref().expect("direct-color model without colors");
            let c = frame
                .splats
                .iter()
                .flat_map(|s| (0..3).map(move |a| sigmoid(colors[3 * s.index + a])))
                .collect();
            (c, None)
        };
        let raster = rasterize_forward(&frame, &payload, 3, &[0.0; 3]);
        let (w, h) = (frame.width, frame.height);
        let color = Image::from_data(w, h, 3, raster.color.clone())?;
        let shadow = if self.config.uses_shadow() && !cloud.is_empty() {
            let visibility = match visibility {
                Some(v) if v.len() == cloud.len() => v.to_vec(),
                Some(v) => {
                    return Err(Error::DimensionMismatch(format!(
                        "{} visibility values for {} gaussians",
                        v.len(),
                        cloud.len()
                    )))
                }
                None => sun_visibility(cloud, &view.sun, self.sun_distance, &view.k)?,
            };
            let idx: Vec<usize> = frame.splats.iter().map(|s| s.index).collect();
            let v: Vec<f64> = idx.iter().map(|&i| visibility[i]).collect();
            let pos = normalized_positions(cloud, &idx, self.scene_radius);
            let lat: Vec<f64> = idx.iter().flat_map(|&i| cloud.latent(i).to_vec()).collect();
            let (refined, cache) = self.psi.forward(&v, &view.sun, &pos, &lat);
            let raster = shadow_image(&frame, &refined);
            let image = Image::from_data(w, h, 1, raster.color.clone())?;
            Some(ShadowRender {
                visibility,
                refined,
                raster,
                image,
                cache,
            })
        } else {
            None
        };
        let image = match &shadow {
            Some(s) => apply_shadow(&color, &s.image)?,
            None => color.clone(),
        };
        Ok(Render {
            image,
            color,
            raster,
            frame,
            payload,
            appearance,
            shadow,
        })
    }

    /// Reverse pass from `dL/dimage` to every trainable quantity.
    pub fn backward(&self, view: &View, r: &Render<T>, d_image: &[f64]) -> Result<ModelGrads<T>> {
        let cloud = &self.cloud;
        let mut grads = ModelGrads::zeros(self);
        let d_color = match &r.shadow {
            Some(s) => apply_shadow_backward(&r.color, &s.image, d_image)?,
            None => (d_image.to_vec(), Vec::new()),
        };
        let mut g = rasterize_backward(&r.frame, &r.payload, &r.raster, &d_color.0);

        if let Some(s) = &r.shadow {
            let gs = rasterize_backward(&r.frame, &s.refined, &s.raster, &d_color.1);
            for si in 0..r.frame.len() {
                for a in 0..2 {
                    g.mean[si][a] += gs.mean[si][a];
                }
                for a in 0..3 {
                    g.conic[si][a] += gs.conic[si][a];
                }
                g.opacity[si] += gs.opacity[si];
            }
            // visibility itself is held constant
            let (_, d_pos, d_lat, d_gain) = self.psi.backward(&s.cache, &gs.payload, &mut grads.psi);
            grads.psi_gain = d_gain;
            for (si, sp) in r.frame.splats.iter().enumerate() {
                let i = sp.index;
                for a in 0..3 {
                    grads.cloud.means[3 * i + a] += d_pos[si][a] / self.scene_radius;
                }
                for a in 0..LATENT_DIM {
                    grads.cloud.latents[LATENT_DIM * i + a] += d_lat[LATENT_DIM * si + a];
                }
            }
        }

        if let Some(cache) = &r.appearance {
            let (d_feat, d_view) = self.phi.backward(cache, &g.payload, &mut grads.phi);
            let center = view.pose.camera_center();
            let fd = crate::cloud::FEATURE_DIM;
            for (si, sp) in r.frame.splats.iter().enumerate() {
                let i = sp.index;
                for a in 0..fd {
                    grads.cloud.features[fd * i + a] += d_feat[fd * si + a];
                }
                let diff = center - cloud.mean(i);
                let len = diff.norm();
                let v = diff / len;
                let d_mu = -(Mat3::identity() - v * v.transpose()) * d_view[si] / len;
                for a in 0..3 {
                    grads.cloud.means[3 * i + a] += d_mu[a];
                }
            }
        } else if let Some(colors) = &cloud.colors {
            let gc = grads.cloud.colors.as_mut().unwrap();
            for (si, sp) in r.frame.splats.iter().enumerate() {
                let i = sp.index;
                for a in 0..3 {
                    let c = sigmoid(colors[3 * i + a]);
                    gc[3 * i + a] += g.payload[3 * si + a] * c * (1.0 - c);
                }
            }
        }

        project_backward(&r.frame, cloud, &view.pose, &view.k, &g, &mut grads.cloud);
        let (hw, hh) = (0.5 * r.frame.width as f64, 0.5 * r.frame.height as f64);
        for (si, sp) in r.frame.splats.iter().enumerate() {
            let m = g.mean[si];
            grads.mean2d[sp.index] = Some((m[0] * hw).hypot(m[1] * hh));
        }
        Ok(grads)
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config,
            cloud: self.cloud.clone(),
            phi: self.phi.cast(),
            psi: self.psi.cast(),
            scene_radius: self.scene_radius,
            sun_distance: self.sun_distance,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{logit, FEATURE_DIM};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn small_model(config: ConfigId, n: usize, seed: u64) -> Model<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = |a: f64, b: f64| rng.random_range(a..b);
        let cloud = GaussianCloud {
            means: (0..3 * n).map(|_| u(-0.5, 0.5)).collect(),
            log_scales: (0..3 * n).map(|_| u(0.05f64.ln(), 0.25f64.ln())).collect(),
            rotations: (0..4 * n).map(|_| u(-1.0, 1.0)).collect(),
            opacity_logits: (0..n).map(|_| logit(u(0.2, 0.8))).collect(),
            features: (0..FEATURE_DIM * n).map(|_| u(-0.5, 0.5)).collect(),
            latents: (0..LATENT_DIM * n).map(|_| u(-0.5, 0.5)).collect(),
            colors: (config == ConfigId::A).then(|| (0..3 * n).map(|_| u(-1.0, 1.0)).collect()),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        Model {
            config,
            cloud,
            phi: AppearanceMlp::new(&mut rng),
            psi: ShadowMlp::new(&mut rng),
            scene_radius: 1.0,
            sun_distance: 4.0,
        }
    }

    fn view() -> View {
        View {
            pose: RigidTransform::look_at(&Vec3::new(0.3, -0.2, 3.0), &Vec3::zeros(), &Vec3::y()),
            k: Pinhole::new(12.0, 12.0, 4.0, 4.0, 8, 8).unwrap(),
            sun: Vec3::new(0.5, 0.7, 0.5).normalize(),
        }
    }

    #[test]
    fn config_flags_and_parsing() {
        assert!(!ConfigId::A.uses_appearance());
        assert!(ConfigId::B.uses_appearance() && !ConfigId::B.uses_shadow());
        assert!(ConfigId::C.uses_shadow() && !ConfigId::C.uses_iso());
        assert!(ConfigId::D.uses_iso());
        assert_eq!("c".parse::<ConfigId>().unwrap(), ConfigId::C);
        assert!("e".parse::<ConfigId>().is_err());
    }

    #[test]
    fn unshadowed_config_skips_shadow_pass() {
        let m = small_model(ConfigId::B, 6, 1);
        let r = m.render(&view()).unwrap();
        assert!(r.shadow.is_none());
        assert_eq!(r.image, r.color);
    }

    #[test]
    fn shadow_gradients_reach_psi_and_latents() {
        let mut m = small_model(ConfigId::C, 6, 2);
        let last = m.psi.net.num_layers() - 1;
        for (k, w) in m.psi.net.layer_weights_mut(last).iter_mut().enumerate() {
            *w = 0.05 * ((k % 5) as f64 - 2.0);
        }
        let v = view();
        let r = m.render(&v).unwrap();
        let d: Vec<f64> = (0..r.image.data.len()).map(|k| ((k % 7) as f64 - 3.0) * 0.1).collect();
        let g = m.backward(&v, &r, &d).unwrap();
        assert!(g.psi.iter().any(|x| *x != 0.0) || g.psi_gain != 0.0);
        assert!(g.cloud.latents.iter().any(|x| *x != 0.0));
        assert!(g.cloud.opacity_logits.iter().any(|x| *x != 0.0));
    }
}
