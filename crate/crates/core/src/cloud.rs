//! Structure-of-arrays Gaussian storage.

use crate::geom::{Quat, Vec3};

pub const FEATURE_DIM: usize = 72;
pub const LATENT_DIM: usize = 6;

/// Trainable per-Gaussian parameter groups, in checkpoint order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Means,
    LogScales,
    Rotations,
    OpacityLogits,
    Features,
    Latents,
    Colors,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 7] = [
        ParamGroup::Means,
        ParamGroup::LogScales,
        ParamGroup::Rotations,
        ParamGroup::OpacityLogits,
        ParamGroup::Features,
        ParamGroup::Latents,
        ParamGroup::Colors,
    ];

    pub fn stride(self) -> usize {
        match self {
            ParamGroup::Means | ParamGroup::LogScales | ParamGroup::Colors => 3,
            ParamGroup::Rotations => 4,
            ParamGroup::OpacityLogits => 1,
            ParamGroup::Features => FEATURE_DIM,
            ParamGroup::Latents => LATENT_DIM,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Means => "means",
            ParamGroup::LogScales => "log_scales",
            ParamGroup::Rotations => "rotations",
            ParamGroup::OpacityLogits => "opacity_logits",
            ParamGroup::Features => "features",
            ParamGroup::Latents => "latents",
            ParamGroup::Colors => "colors",
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Gaussian parameters. `colors` (direct RGB logits) exists only for the
/// baseline configuration without an appearance network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianCloud {
    pub means: Vec<f64>,
    pub log_scales: Vec<f64>,
    pub rotations: Vec<f64>,
    pub opacity_logits: Vec<f64>,
    pub features: Vec<f64>,
    pub latents: Vec<f64>,
    pub colors: Option<Vec<f64>>,
}

impl GaussianCloud {
    pub fn len(&self) -> usize {
        self.opacity_logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacity_logits.is_empty()
    }

    pub fn mean(&self, i: usize) -> Vec3 {
        Vec3::new(self.means[3 * i], self.means[3 * i + 1], self.means[3 * i + 2])
    }

    pub fn log_scale(&self, i: usize) -> Vec3 {
        Vec3::new(
            self.log_scales[3 * i],
            self.log_scales[3 * i + 1],
            self.log_scales[3 * i + 2],
        )
    }

    pub fn scale(&self, i: usize) -> Vec3 {
        self.log_scale(i).map(f64::exp)
    }

    pub fn rotation(&self, i: usize) -> [f64; 4] {
        let r = &self.rotations[4 * i..4 * i + 4];
        [r[0], r[1], r[2], r[3]]
    }

    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.opacity_logits[i])
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[FEATURE_DIM * i..FEATURE_DIM * (i + 1)]
    }

    pub fn latent(&self, i: usize) -> &[f64] {
        &self.latents[LATENT_DIM * i..LATENT_DIM * (i + 1)]
    }

    pub fn group(&self, g: ParamGroup) -> Option<&Vec<f64>> {
        match g {
            ParamGroup::Means => Some(&self.means),
            ParamGroup::LogScales => Some(&self.log_scales),
            ParamGroup::Rotations => Some(&self.rotations),
            ParamGroup::OpacityLogits => Some(&self.opacity_logits),
            ParamGroup::Features => Some(&self.features),
            ParamGroup::Latents => Some(&self.latents),
            ParamGroup::Colors => self.colors.as_ref(),
        }
    }

    pub fn group_mut(&mut self, g: ParamGroup) -> Option<&mut Vec<f64>> {
        match g {
            ParamGroup::Means => Some(&mut self.means),
            ParamGroup::LogScales => Some(&mut self.log_scales),
            ParamGroup::Rotations => Some(&mut self.rotations),
            ParamGroup::OpacityLogits => Some(&mut self.opacity_logits),
            ParamGroup::Features => Some(&mut self.features),
            ParamGroup::Latents => Some(&mut self.latents),
            ParamGroup::Colors => self.colors.as_mut(),
        }
    }

    /// Every present group has exactly `len()` rows.
    pub fn is_consistent(&self) -> bool {
        let n = self.len();
        ParamGroup::ALL
            .iter()
            .filter_map(|&g| self.group(g).map(|v| (g, v)))
            .all(|(g, v)| v.len() == n * g.stride())
    }

    /// Renormalizes quaternions and clamps log-scales into `[lo, hi]`.
    pub fn sanitize(&mut self, log_scale_lo: f64, log_scale_hi: f64) {
        for q in self.rotations.chunks_exact_mut(4) {
            let u = Quat::new(q[0], q[1], q[2], q[3]);
            q.copy_from_slice(&u.to_array());
        }
        for s in &mut self.log_scales {
            *s = s.clamp(log_scale_lo, log_scale_hi);
        }
    }

    /// Keeps the rows whose index appears in `keep`, in that order.
    pub fn select(&self, keep: &[usize]) -> GaussianCloud {
        let mut out = GaussianCloud {
            colors: self.colors.as_ref().map(|_| Vec::new()),
            ..Default::default()
        };
        for &g in &ParamGroup::ALL {
            if let (Some(src), Some(dst)) = (self.group(g), out.group_mut(g)) {
                let s = g.stride();
                dst.reserve(keep.len() * s);
                for &i in keep {
                    dst.extend_from_slice(&src[i * s..(i + 1) * s]);
                }
            }
        }
        out
    }

    /// Appends all rows of `other` (which must carry the same optional groups).
    pub fn append(&mut self, other: &GaussianCloud) {
        for &g in &ParamGroup::ALL {
            if let (Some(src), Some(dst)) = (other.group(g), self.group_mut(g)) {
                dst.extend_from_slice(src);
            }
        }
    }
}

/// Per-Gaussian gradients with the same layout as [`GaussianCloud`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CloudGrads {
    pub means: Vec<f64>,
    pub log_scales: Vec<f64>,
    pub rotations: Vec<f64>,
    pub opacity_logits: Vec<f64>,
    pub features: Vec<f64>,
    pub latents: Vec<f64>,
    pub colors: Option<Vec<f64>>,
}

impl CloudGrads {
    pub fn zeros_like(cloud: &GaussianCloud) -> Self {
        let n = cloud.len();
        CloudGrads {
            means: vec![0.0; 3 * n],
            log_scales: vec![0.0; 3 * n],
            rotations: vec![0.0; 4 * n],
            opacity_logits: vec![0.0; n],
            features: vec![0.0; FEATURE_DIM * n],
            latents: vec![0.0; LATENT_DIM * n],
            colors: cloud.colors.as_ref().map(|_| vec![0.0; 3 * n]),
        }
    }

    pub fn group(&self, g: ParamGroup) -> Option<&Vec<f64>> {
        match g {
            ParamGroup::Means => Some(&self.means),
            ParamGroup::LogScales => Some(&self.log_scales),
            ParamGroup::Rotations => Some(&self.rotations),
            ParamGroup::OpacityLogits => Some(&self.opacity_logits),
            ParamGroup::Features => Some(&self.features),
            ParamGroup::Latents => Some(&self.latents),
            ParamGroup::Colors => self.colors.as_ref(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(n: usize, colors: bool) -> GaussianCloud {
        GaussianCloud {
            means: (0..3 * n).map(|v| v as f64).collect(),
            log_scales: vec![0.0; 3 * n],
            rotations: (0..n).flat_map(|_| [2.0, 0.0, 0.0, 0.0]).collect(),
            opacity_logits: (0..n).map(|v| v as f64).collect(),
            features: vec![0.5; FEATURE_DIM * n],
            latents: vec![0.0; LATENT_DIM * n],
            colors: colors.then(|| vec![0.0; 3 * n]),
        }
    }

    #[test]
    fn select_and_append_keep_groups_aligned() {
        let c = tiny(5, true);
        let mut s = c.select(&[4, 1]);
        assert_eq!(s.len(), 2);
        assert_eq!(s.mean(0), c.mean(4));
        assert!(s.is_consistent());
        s.append(&c.select(&[0]));
        assert_eq!(s.len(), 3);
        assert!(s.is_consistent());
    }

    #[test]
    fn sanitize_normalizes_and_clamps() {
        let mut c = tiny(2, false);
        c.log_scales[0] = 50.0;
        c.sanitize(-5.0, 1.0);
        assert_eq!(c.rotation(0), [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(c.log_scales[0], 1.0);
    }
}
