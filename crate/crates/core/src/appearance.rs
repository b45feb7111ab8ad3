//! Sun- and view-conditioned color network Φ and shadow refinement network Ψ.

use std::f64::consts::PI;

use rand::Rng;

use crate::cloud::{FEATURE_DIM, LATENT_DIM};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::mlp::{sigmoid, Mlp, MlpCache, Real};

/// Frequency count for every encoded direction or position.
pub const ENC_FREQS: usize = 4;
pub const ENC_DIM: usize = 6 * ENC_FREQS;
pub const PHI_INPUT: usize = FEATURE_DIM + 2 * ENC_DIM;
pub const PSI_INPUT: usize = 1 + 2 * ENC_DIM + LATENT_DIM;
pub const PHI_HIDDEN: usize = 256;
pub const PSI_HIDDEN: usize = 32;

/// Visibility is clipped to this band before taking its logit on the skip path.
pub const SKIP_CLIP: f64 = 0.01;

/// `[sin(2⁰πp), cos(2⁰πp), …, sin(2^{L-1}πp), cos(2^{L-1}πp)]` for each
/// component `p`, component-major.
pub fn positional_encode(v: &[f64], freqs: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * freqs * v.len());
    encode_into(v, freqs, &mut out);
    out
}

fn encode_into<T: Real>(v: &[f64], freqs: usize, out: &mut Vec<T>) {
    for &p in v {
        let mut w = PI;
        for _ in 0..freqs {
            let (s, c) = (w * p).sin_cos();
            out.push(T::of(s));
            out.push(T::of(c));
            w *= 2.0;
        }
    }
}

/// Pulls gradients on an encoding back to the encoded 3-vector.
fn encode_backward(v: &Vec3, d_enc: &[f64]) -> Vec3 {
    let mut g = Vec3::zeros();
    for a in 0..3 {
        let mut w = PI;
        for k in 0..ENC_FREQS {
            let (s, c) = (w * v[a]).sin_cos();
            let o = a * 2 * ENC_FREQS + 2 * k;
            g[a] += w * (c * d_enc[o] - s * d_enc[o + 1]);
            w *= 2.0;
        }
    }
    g
}

fn check_widths<T: Real>(net: &Mlp<T>, input: usize, name: &str) -> Result<()> {
    if net.input_dim() != input || net.output_dim() != if name == "Φ" { 3 } else { 1 } {
        return Err(Error::Shape(format!(
            "{name} expects input {input}, got widths {:?}",
            net.widths()
        )));
    }
    Ok(())
}

/// Φ: `[f | γ(sun) | γ(view)] → 256 → 256 → 256 → RGB`.
#[derive(Clone, Debug, PartialEq)]
pub struct AppearanceMlp<T = f32> {
    pub net: Mlp<T>,
}

pub struct AppearanceCache<T> {
    mlp: MlpCache<T>,
    colors: Vec<f64>,
    views: Vec<Vec3>,
}

impl<T: Real> AppearanceMlp<T> {
    pub fn widths() -> [usize; 5] {
        [PHI_INPUT, PHI_HIDDEN, PHI_HIDDEN, PHI_HIDDEN, 3]
    }

    pub fn new(rng: &mut impl Rng) -> Self {
        let mut net = Mlp::kaiming(&Self::widths(), rng).unwrap();
        let last = net.num_layers() - 1;
        net.layer_bias_mut(last).fill(T::zero());
        AppearanceMlp { net }
    }

    pub fn zeros() -> Self {
        AppearanceMlp {
            net: Mlp::zeros(&Self::widths()).unwrap(),
        }
    }

    pub fn from_net(net: Mlp<T>) -> Result<Self> {
        check_widths(&net, PHI_INPUT, "Φ")?;
        Ok(AppearanceMlp { net })
    }

    /// Colors for `views.len()` Gaussians sharing one sun direction.
    pub fn forward(&self, features: &[f64], sun: &Vec3, views: &[Vec3]) -> (Vec<f64>, AppearanceCache<T>) {
        let n = views.len();
        assert_eq!(features.len(), n * FEATURE_DIM, "feature buffer size");
        let sun_enc: Vec<T> = {
            let mut e = Vec::with_capacity(ENC_DIM);
            encode_into(sun.as_slice(), ENC_FREQS, &mut e);
            e
        };
        let mut input = Vec::with_capacity(n * PHI_INPUT);
        for (i, v) in views.iter().enumerate() {
            input.extend(features[i * FEATURE_DIM..(i + 1) * FEATURE_DIM].iter().map(|f| T::of(*f)));
            input.extend_from_slice(&sun_enc);
            encode_into(v.as_slice(), ENC_FREQS, &mut input);
        }
        let (logits, mlp) = self.net.forward(&input, n);
        let colors: Vec<f64> = logits.iter().map(|z| sigmoid(*z).f64()).collect();
        (
            colors.clone(),
            AppearanceCache {
                mlp,
                colors,
                views: views.to_vec(),
            },
        )
    }

    pub fn infer(&self, features: &[f64], sun: &Vec3, views: &[Vec3]) -> Vec<f64> {
        self.forward(features, sun, views).0
    }

    /// Returns `(dL/df, dL/dview)` and accumulates parameter gradients.
    pub fn backward(
        &self,
        cache: &AppearanceCache<T>,
        d_colors: &[f64],
        param_grads: &mut [T],
    ) -> (Vec<f64>, Vec<Vec3>) {
        let d_logits: Vec<T> = cache
            .colors
            .iter()
            .zip(d_colors)
            .map(|(c, d)| T::of(d * c * (1.0 - c)))
            .collect();
        let d_in = self.net.backward(&cache.mlp, &d_logits, param_grads);
        let n = cache.views.len();
        let mut d_feat = Vec::with_capacity(n * FEATURE_DIM);
        let mut d_view = Vec::with_capacity(n);
        let view_off = FEATURE_DIM + ENC_DIM;
        for i in 0..n {
            let row = &d_in[i * PHI_INPUT..(i + 1) * PHI_INPUT];
            d_feat.extend(row[..FEATURE_DIM].iter().map(|v| v.f64()));
            let d_enc: Vec<f64> = row[view_off..].iter().map(|v| v.f64()).collect();
            d_view.push(encode_backward(&cache.views[i], &d_enc));
        }
        (d_feat, d_view)
    }

    pub fn cast<U: Real>(&self) -> AppearanceMlp<U> {
        AppearanceMlp { net: self.net.cast() }
    }
}

/// Ψ: `[V | γ(sun) | γ(μ/r) | l] → 32 → 32 → 32 → 1`, read out as
/// `sigmoid(h + g · logit(clip(V)))` with a trainable skip gain `g`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShadowMlp<T = f32> {
    pub net: Mlp<T>,
    pub skip_gain: T,
}

pub struct ShadowCache<T> {
    mlp: MlpCache<T>,
    refined: Vec<f64>,
    vis: Vec<f64>,
    positions: Vec<Vec3>,
}

fn clipped_logit(v: f64) -> (f64, f64) {
    let c = v.clamp(SKIP_CLIP, 1.0 - SKIP_CLIP);
    let d = if v > SKIP_CLIP && v < 1.0 - SKIP_CLIP {
        1.0 / (c * (1.0 - c))
    } else {
        0.0
    };
    ((c / (1.0 - c)).ln(), d)
}

impl<T: Real> ShadowMlp<T> {
    pub fn widths() -> [usize; 5] {
        [PSI_INPUT, PSI_HIDDEN, PSI_HIDDEN, PSI_HIDDEN, 1]
    }

    /// Hidden layers random, head zeroed, skip gain 1: starts as `V′ = clip(V)`.
    pub fn new(rng: &mut impl Rng) -> Self {
        let mut net = Mlp::kaiming(&Self::widths(), rng).unwrap();
        let last = net.num_layers() - 1;
        net.layer_weights_mut(last).fill(T::zero());
        net.layer_bias_mut(last).fill(T::zero());
        ShadowMlp {
            net,
            skip_gain: T::one(),
        }
    }

    pub fn zeros() -> Self {
        ShadowMlp {
            net: Mlp::zeros(&Self::widths()).unwrap(),
            skip_gain: T::zero(),
        }
    }

    pub fn from_parts(net: Mlp<T>, skip_gain: T) -> Result<Self> {
        check_widths(&net, PSI_INPUT, "Ψ")?;
        Ok(ShadowMlp { net, skip_gain })
    }

    /// `positions` are object-frame means already divided by the scene radius.
    pub fn forward(
        &self,
        vis: &[f64],
        sun: &Vec3,
        positions: &[Vec3],
        latents: &[f64],
    ) -> (Vec<f64>, ShadowCache<T>) {
        let n = vis.len();
        assert_eq!(positions.len(), n, "position count");
        assert_eq!(latents.len(), n * LATENT_DIM, "latent buffer size");
        let mut sun_enc: Vec<T> = Vec::with_capacity(ENC_DIM);
        encode_into(sun.as_slice(), ENC_FREQS, &mut sun_enc);
        let mut input = Vec::with_capacity(n * PSI_INPUT);
        for i in 0..n {
            input.push(T::of(vis[i]));
            input.extend_from_slice(&sun_enc);
            encode_into(positions[i].as_slice(), ENC_FREQS, &mut input);
            input.extend(latents[i * LATENT_DIM..(i + 1) * LATENT_DIM].iter().map(|l| T::of(*l)));
        }
        let (h, mlp) = self.net.forward(&input, n);
        let g = self.skip_gain.f64();
        let refined: Vec<f64> = h
            .iter()
            .zip(vis)
            .map(|(h, v)| {
                let z = h.f64() + g * clipped_logit(*v).0;
                1.0 / (1.0 + (-z).exp())
            })
            .collect();
        (
            refined.clone(),
            ShadowCache {
                mlp,
                refined,
                vis: vis.to_vec(),
                positions: positions.to_vec(),
            },
        )
    }

    pub fn infer(&self, vis: &[f64], sun: &Vec3, positions: &[Vec3], latents: &[f64]) -> Vec<f64> {
        self.forward(vis, sun, positions, latents).0
    }

    /// Returns `(dL/dV, dL/dposition, dL/dl, dL/dg)`; network gradients go to
    /// `param_grads`.
    pub fn backward(
        &self,
        cache: &ShadowCache<T>,
        d_refined: &[f64],
        param_grads: &mut [T],
    ) -> (Vec<f64>, Vec<Vec3>, Vec<f64>, f64) {
        let n = cache.vis.len();
        let g = self.skip_gain.f64();
        let mut d_z = Vec::with_capacity(n);
        let mut d_gain = 0.0;
        let mut d_vis = Vec::with_capacity(n);
        for i in 0..n {
            let r = cache.refined[i];
            let dz = d_refined[i] * r * (1.0 - r);
            let (lg, dlg) = clipped_logit(cache.vis[i]);
            d_gain += dz * lg;
            d_vis.push(dz * g * dlg);
            d_z.push(T::of(dz));
        }
        let d_in = self.net.backward(&cache.mlp, &d_z, param_grads);
        let pos_off = 1 + ENC_DIM;
        let lat_off = pos_off + ENC_DIM;
        let mut d_lat = Vec::with_capacity(n * LATENT_DIM);
        let mut d_pos = Vec::with_capacity(n);
        for i in 0..n {
            let row = &d_in[i * PSI_INPUT..(i + 1) * PSI_INPUT];
            d_vis[i] += row[0].f64();
            let d_enc: Vec<f64> = row[pos_off..lat_off].iter().map(|v| v.f64()).collect();
            d_pos.push(encode_backward(&cache.positions[i], &d_enc));
            d_lat.extend(row[lat_off..].iter().map(|v| v.f64()));
        }
        (d_vis, d_pos, d_lat, d_gain)
    }

    pub fn cast<U: Real>(&self) -> ShadowMlp<U> {
        ShadowMlp {
            net: self.net.cast(),
            skip_gain: U::of(self.skip_gain.f64()),
        }
    }
}
