//! Photometric and scale losses, and the PSNR / SSIM metrics.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub lambda_ssim: f64,
    pub lambda_iso: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_ssim: 0.2,
            lambda_iso: 10.0,
        }
    }
}

/// Mean absolute error over the selected pixels (all channels), with its
/// gradient with respect to `pred`.
pub fn l1_loss(pred: &Image, gt: &Image, region: &[bool]) -> Result<(f64, Vec<f64>)> {
    pred.ensure_same_shape(gt)?;
    if region.len() != pred.pixels() {
        return Err(Error::DimensionMismatch(format!(
            "mask has {} pixels, image {}",
            region.len(),
            pred.pixels()
        )));
    }
    let count = region.iter().filter(|m| **m).count() * pred.channels;
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    let inv = 1.0 / count as f64;
    let ch = pred.channels;
    let mut sum = 0.0;
    let mut grad = vec![0.0; pred.data.len()];
    for (p, _) in region.iter().enumerate().filter(|(_, m)| **m) {
        for c in 0..ch {
            let o = p * ch + c;
            let r = pred.data[o] - gt.data[o];
            sum += r.abs();
            grad[o] = if r > 0.0 {
                inv
            } else if r < 0.0 {
                -inv
            } else {
                0.0
            };
        }
    }
    Ok((sum * inv, grad))
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable "same" convolution with zero padding. The kernel is symmetric,
/// so this map is its own adjoint.
fn blur(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = SSIM_WINDOW / 2;
    // taps i with 0 <= x + i - r < n
    let taps = |x: usize, n: usize| (r.saturating_sub(x), (n + r - x).min(SSIM_WINDOW));
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let (lo, hi) = taps(x, w);
            let mut acc = 0.0;
            for i in lo..hi {
                acc += k[i] * row[x + i - r];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let (lo, hi) = taps(y, h);
        let dst = &mut out[y * w..(y + 1) * w];
        for i in lo..hi {
            let kv = k[i];
            let srow = &tmp[(y + i - r) * w..(y + i - r + 1) * w];
            for (d, v) in dst.iter_mut().zip(srow) {
                *d += kv * v;
            }
        }
    }
    out
}

struct ChannelSsim {
    map: Vec<f64>,
    /// Per-pixel `∂S/∂μx`, `∂S/∂E[x²]`, `∂S/∂E[xy]`.
    partials: Option<[Vec<f64>; 3]>,
}

fn ssim_channel(x: &[f64], y: &[f64], w: usize, h: usize, with_grad: bool) -> ChannelSsim {
    let k = gaussian_kernel();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mx = blur(x, w, h, &k);
    let my = blur(y, w, h, &k);
    let mxx = blur(&xx, w, h, &k);
    let myy = blur(&yy, w, h, &k);
    let mxy = blur(&xy, w, h, &k);
    let n = w * h;
    let mut map = vec![0.0; n];
    let mut partials = with_grad.then(|| [vec![0.0; n], vec![0.0; n], vec![0.0; n]]);
    for p in 0..n {
        let (ux, uy) = (mx[p], my[p]);
        let a1 = 2.0 * ux * uy + c1;
        let a2 = 2.0 * (mxy[p] - ux * uy) + c2;
        let b1 = ux * ux + uy * uy + c1;
        let b2 = (mxx[p] - ux * ux) + (myy[p] - uy * uy) + c2;
        let s = a1 * a2 / (b1 * b2);
        map[p] = s;
        if let Some([d_mu, d_m2, d_m12]) = partials.as_mut() {
            let bb = b1 * b2;
            d_mu[p] = (2.0 * uy * a2 - 2.0 * uy * a1) / bb - s * (2.0 * ux / b1 - 2.0 * ux / b2);
            d_m2[p] = -s / b2;
            d_m12[p] = 2.0 * a1 / bb;
        }
    }
    ChannelSsim { map, partials }
}

/// Per-pixel SSIM averaged over channels.
pub fn ssim_map(pred: &Image, gt: &Image) -> Result<Vec<f64>> {
    pred.ensure_same_shape(gt)?;
    let (w, h, ch) = (pred.width, pred.height, pred.channels);
    let maps: Vec<Vec<f64>> = (0..ch)
        .into_par_iter()
        .map(|c| ssim_channel(&pred.channel(c).data, &gt.channel(c).data, w, h, false).map)
        .collect();
    let mut out = vec![0.0; w * h];
    for m in maps {
        for (o, v) in out.iter_mut().zip(m) {
            *o += v / ch as f64;
        }
    }
    Ok(out)
}

/// Mean SSIM over all pixels and channels.
pub fn ssim(pred: &Image, gt: &Image) -> Result<f64> {
    let m = ssim_map(pred, gt)?;
    Ok(m.iter().sum::<f64>() / m.len() as f64)
}

/// Mean SSIM restricted to the selected pixels.
pub fn ssim_masked(pred: &Image, gt: &Image, region: &[bool]) -> Result<f64> {
    let m = ssim_map(pred, gt)?;
    let sel: Vec<f64> = m.iter().zip(region).filter(|(_, r)| **r).map(|(v, _)| *v).collect();
    if sel.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(sel.iter().sum::<f64>() / sel.len() as f64)
}

/// Mean SSIM and its gradient with respect to `pred`.
pub fn ssim_with_grad(pred: &Image, gt: &Image) -> Result<(f64, Vec<f64>)> {
    pred.ensure_same_shape(gt)?;
    let (w, h, ch) = (pred.width, pred.height, pred.channels);
    let k = gaussian_kernel();
    let norm = 1.0 / (w * h * ch) as f64;
    let per_channel: Vec<(f64, Vec<f64>)> = (0..ch)
        .into_par_iter()
        .map(|c| {
            let x = pred.channel(c).data;
            let y = gt.channel(c).data;
            let r = ssim_channel(&x, &y, w, h, true);
            let [d_mu, d_m2, d_m12] = r.partials.unwrap();
            let scale = |v: Vec<f64>| -> Vec<f64> { v.into_iter().map(|d| d * norm).collect() };
            let g_mu = blur(&scale(d_mu), w, h, &k);
            let g_m2 = blur(&scale(d_m2), w, h, &k);
            let g_m12 = blur(&scale(d_m12), w, h, &k);
            let grad = (0..w * h)
                .map(|p| g_mu[p] + 2.0 * x[p] * g_m2[p] + y[p] * g_m12[p])
                .collect();
            (r.map.iter().sum::<f64>(), grad)
        })
        .collect();
    let mut total = 0.0;
    let mut grad = vec![0.0; pred.data.len()];
    for (c, (s, g)) in per_channel.into_iter().enumerate() {
        total += s;
        for (p, v) in g.into_iter().enumerate() {
            grad[p * ch + c] = v;
        }
    }
    Ok((total * norm, grad))
}

#[derive(Clone, Debug)]
pub struct PhotometricLoss {
    pub total: f64,
    pub l1: f64,
    /// `1 - ssim`.
    pub ssim_term: f64,
    pub grad: Vec<f64>,
}

/// `(1 - λ) L1 + λ (1 - ssim)`, with L1 over `region` and SSIM over the full image.
pub fn photometric_loss(pred: &Image, gt: &Image, region: &[bool], lambda_ssim: f64) -> Result<PhotometricLoss> {
    let (l1, g1) = l1_loss(pred, gt, region)?;
    let (s, gs) = if lambda_ssim > 0.0 {
        ssim_with_grad(pred, gt)?
    } else {
        (ssim(pred, gt)?, vec![0.0; pred.data.len()])
    };
    let grad = g1
        .iter()
        .zip(&gs)
        .map(|(a, b)| (1.0 - lambda_ssim) * a - lambda_ssim * b)
        .collect();
    Ok(PhotometricLoss {
        total: (1.0 - lambda_ssim) * l1 + lambda_ssim * (1.0 - s),
        l1,
        ssim_term: 1.0 - s,
        grad,
    })
}

/// `Σᵢ Σₖ |sᵢₖ - mean(sᵢ)|` over scale triples, with its subgradient with
/// respect to the (positive) scale values.
pub fn isotropic_loss(scales: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(scales.len() % 3, 0);
    let mut total = 0.0;
    let mut grad = vec![0.0; scales.len()];
    for (s, g) in scales.chunks_exact(3).zip(grad.chunks_exact_mut(3)) {
        if s[0] == s[1] && s[1] == s[2] {
            continue;
        }
        let m = (s[0] + s[1] + s[2]) / 3.0;
        let sg = [sign(s[0] - m), sign(s[1] - m), sign(s[2] - m)];
        let mean_sg = (sg[0] + sg[1] + sg[2]) / 3.0;
        for k in 0..3 {
            total += (s[k] - m).abs();
            g[k] = sg[k] - mean_sg;
        }
    }
    (total, grad)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub l1: f64,
    pub ssim_term: f64,
    pub iso: f64,
}

/// `photometric + λ_iso · iso` when the scale term is enabled.
pub fn total_loss(photo: &PhotometricLoss, iso: Option<f64>, lambda_iso: f64) -> LossBreakdown {
    let iso_v = iso.unwrap_or(0.0);
    LossBreakdown {
        total: photo.total + if iso.is_some() { lambda_iso * iso_v } else { 0.0 },
        l1: photo.l1,
        ssim_term: photo.ssim_term,
        iso: iso_v,
    }
}

pub fn mse(pred: &Image, gt: &Image) -> Result<f64> {
    pred.ensure_same_shape(gt)?;
    let s: f64 = pred.data.iter().zip(&gt.data).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(s / pred.data.len() as f64)
}

/// `10 log10(1 / MSE)`; `+∞` for identical images.
pub fn psnr(pred: &Image, gt: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(pred, gt)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// PSNR over the selected pixels only.
pub fn psnr_masked(pred: &Image, gt: &Image, region: &[bool]) -> Result<f64> {
    pred.ensure_same_shape(gt)?;
    let ch = pred.channels;
    let mut s = 0.0;
    let mut n = 0usize;
    for (p, _) in region.iter().enumerate().filter(|(_, m)| **m) {
        for c in 0..ch {
            let d = pred.data[p * ch + c] - gt.data[p * ch + c];
            s += d * d;
        }
        n += ch;
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(psnr_from_mse(s / n as f64))
}
