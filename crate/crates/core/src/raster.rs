//! Tile-binned, depth-sorted front-to-back alpha compositing of splatted
//! Gaussians, with its exact reverse pass.
//!
//! Tiles only accelerate the search: every splat is binned into every tile that
//! holds a pixel where its alpha can reach [`ALPHA_MIN`], so the rendered image
//! is independent of the tiling.

use rayon::prelude::*;

use crate::cloud::{sigmoid, CloudGrads, GaussianCloud};
use crate::geom::{
    build_covariance, build_covariance_backward, conic_backward, conic_of, projection_jacobian,
    projection_jacobian_backward, splat_covariance, splat_covariance_backward, Mat2, Mat23, Mat3,
    Pinhole, RigidTransform, Vec3, Z_NEAR,
};

pub const TILE_SIZE: usize = 16;
pub const ALPHA_MAX: f64 = 0.99;
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
pub const TRANSMITTANCE_MIN: f64 = 1e-4;

/// One splatted Gaussian as seen by the compositor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Splat {
    /// Index of the source Gaussian in its cloud.
    pub index: usize,
    pub mean: [f64; 2],
    /// Inverse splat covariance `[[a, b], [b, c]]` as `(a, b, c)`.
    pub conic: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
}

/// Projection intermediates kept for the reverse pass.
#[derive(Clone, Copy, Debug)]
pub struct SplatGeometry {
    pub p_cam: Vec3,
    pub jacobian: Mat23,
    pub sigma: Mat3,
    pub cov2: Mat2,
}

/// Unnormalized 2D Gaussian `exp(-½ dᵀ C d)` for conic `C`.
pub fn eval_gaussian_2d(conic: [f64; 3], d: [f64; 2]) -> f64 {
    (gaussian_power(conic, d[0], d[1])).exp()
}

#[inline]
fn gaussian_power(conic: [f64; 3], dx: f64, dy: f64) -> f64 {
    -0.5 * (conic[0] * dx * dx + conic[2] * dy * dy) - conic[1] * dx * dy
}

/// Half-widths of the axis-aligned box outside which `opacity · G < ALPHA_MIN`.
/// `None` when the splat can never reach the threshold.
pub fn cutoff_extent(conic: [f64; 3], opacity: f64) -> Option<[f64; 2]> {
    let level = opacity / ALPHA_MIN;
    if !(level > 1.0) {
        return None;
    }
    let r2 = 2.0 * level.ln();
    let det = conic[0] * conic[2] - conic[1] * conic[1];
    if !(det > 0.0) {
        return None;
    }
    let cov_xx = conic[2] / det;
    let cov_yy = conic[0] / det;
    // small slack so rounding in exp() never drops a contributing pixel
    let pad = 1e-6;
    Some([(r2 * cov_xx).sqrt() + pad, (r2 * cov_yy).sqrt() + pad])
}

/// Bins of splat positions (indices into the sorted splat list, ascending).
#[derive(Clone, Debug, Default)]
pub struct TileGrid {
    pub origin: [f64; 2],
    pub cell: f64,
    pub nx: usize,
    pub ny: usize,
    ranges: Vec<(u32, u32)>,
    items: Vec<u32>,
}

impl TileGrid {
    pub fn cell_items(&self, cell: usize) -> &[u32] {
        let (a, b) = self.ranges[cell];
        &self.items[a as usize..b as usize]
    }

    pub fn cell_count(&self) -> usize {
        self.nx * self.ny
    }

    /// Cell containing a continuous point, if inside the grid.
    pub fn cell_of(&self, p: [f64; 2]) -> Option<usize> {
        let cx = ((p[0] - self.origin[0]) / self.cell).floor();
        let cy = ((p[1] - self.origin[1]) / self.cell).floor();
        if cx < 0.0 || cy < 0.0 || cx >= self.nx as f64 || cy >= self.ny as f64 {
            return None;
        }
        Some(cy as usize * self.nx + cx as usize)
    }

    fn from_spans(nx: usize, ny: usize, origin: [f64; 2], cell: f64, spans: &[Option<[usize; 4]>]) -> Self {
        // counting sort keeps per-cell order equal to splat (depth) order
        let mut counts = vec![0u32; nx * ny];
        for span in spans.iter().flatten() {
            for ty in span[2]..=span[3] {
                for tx in span[0]..=span[1] {
                    counts[ty * nx + tx] += 1;
                }
            }
        }
        let mut ranges = Vec::with_capacity(nx * ny);
        let mut start = 0u32;
        for &c in &counts {
            ranges.push((start, start));
            start += c;
        }
        let mut items = vec![0u32; start as usize];
        for (si, span) in spans.iter().enumerate() {
            if let Some(span) = span {
                for ty in span[2]..=span[3] {
                    for tx in span[0]..=span[1] {
                        let r = &mut ranges[ty * nx + tx];
                        items[r.1 as usize] = si as u32;
                        r.1 += 1;
                    }
                }
            }
        }
        TileGrid {
            origin,
            cell,
            nx,
            ny,
            ranges,
            items,
        }
    }
}

/// Pixel-tile span `[tx0, tx1, ty0, ty1]` covered by a splat on a `w × h` image.
fn image_span(s: &Splat, w: usize, h: usize) -> Option<[usize; 4]> {
    let ext = cutoff_extent(s.conic, s.opacity)?;
    let x0 = (s.mean[0] - ext[0]).ceil().max(0.0);
    let x1 = (s.mean[0] + ext[0]).floor().min(w as f64 - 1.0);
    let y0 = (s.mean[1] - ext[1]).ceil().max(0.0);
    let y1 = (s.mean[1] + ext[1]).floor().min(h as f64 - 1.0);
    if !(x0 <= x1 && y0 <= y1) {
        return None;
    }
    Some([
        x0 as usize / TILE_SIZE,
        x1 as usize / TILE_SIZE,
        y0 as usize / TILE_SIZE,
        y1 as usize / TILE_SIZE,
    ])
}

/// Depth-sorted splats plus their tile bins.
#[derive(Clone, Debug, Default)]
pub struct SplatFrame {
    pub splats: Vec<Splat>,
    /// Empty when built directly from 2D splats.
    pub geometry: Vec<SplatGeometry>,
    pub width: usize,
    pub height: usize,
    pub grid: TileGrid,
}

impl SplatFrame {
    /// Sorts by `(depth, index)` and bins onto the image tiles.
    pub fn from_splats(splats: Vec<Splat>, width: usize, height: usize) -> Self {
        Self::build(splats.into_iter().map(|s| (s, None)).collect(), width, height, false)
    }

    fn build(
        mut entries: Vec<(Splat, Option<SplatGeometry>)>,
        width: usize,
        height: usize,
        drop_offscreen: bool,
    ) -> Self {
        entries.sort_by(|a, b| {
            a.0.depth
                .total_cmp(&b.0.depth)
                .then(a.0.index.cmp(&b.0.index))
        });
        let mut spans: Vec<Option<[usize; 4]>> = entries
            .iter()
            .map(|(s, _)| image_span(s, width, height))
            .collect();
        if drop_offscreen {
            let keep: Vec<bool> = spans.iter().map(Option::is_some).collect();
            let mut it = keep.iter();
            entries.retain(|_| *it.next().unwrap());
            spans.retain(Option::is_some);
        }
        let nx = width.div_ceil(TILE_SIZE);
        let ny = height.div_ceil(TILE_SIZE);
        let grid = TileGrid::from_spans(nx, ny, [0.0, 0.0], TILE_SIZE as f64, &spans);
        let has_geom = entries.iter().all(|e| e.1.is_some()) && !entries.is_empty();
        let (splats, geometry): (Vec<_>, Vec<_>) = entries.into_iter().unzip();
        SplatFrame {
            splats,
            geometry: if has_geom {
                geometry.into_iter().map(Option::unwrap).collect()
            } else {
                Vec::new()
            },
            width,
            height,
            grid,
        }
    }

    pub fn len(&self) -> usize {
        self.splats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splats.is_empty()
    }
}

/// Projects one Gaussian; `None` when behind the camera or degenerate.
pub fn project_gaussian(
    cloud: &GaussianCloud,
    i: usize,
    w_rot: &Mat3,
    pose: &RigidTransform,
    k: &Pinhole,
) -> Option<(Splat, SplatGeometry)> {
    let p_cam = w_rot * cloud.mean(i) + pose.translation;
    if p_cam.z <= Z_NEAR {
        return None;
    }
    let jacobian = projection_jacobian(&p_cam, k).ok()?;
    let sigma = build_covariance(cloud.rotation(i), &cloud.scale(i));
    let cov2 = splat_covariance(&sigma, w_rot, &jacobian).ok()?;
    let splat = Splat {
        index: i,
        mean: [
            k.fx * p_cam.x / p_cam.z + k.cx,
            k.fy * p_cam.y / p_cam.z + k.cy,
        ],
        conic: conic_of(&cov2),
        depth: p_cam.z,
        opacity: cloud.opacity(i),
    };
    Some((
        splat,
        SplatGeometry {
            p_cam,
            jacobian,
            sigma,
            cov2,
        },
    ))
}

/// Culls Gaussians behind the camera, degenerate after splatting, or with no
/// pixel footprint on the image, then sorts the rest front to back.
pub fn cull_and_sort(cloud: &GaussianCloud, pose: &RigidTransform, k: &Pinhole) -> SplatFrame {
    let w_rot = pose.rotation_matrix();
    let entries: Vec<_> = (0..cloud.len())
        .into_par_iter()
        .filter_map(|i| project_gaussian(cloud, i, &w_rot, pose, k))
        .map(|(s, g)| (s, Some(g)))
        .collect();
    SplatFrame::build(entries, k.width as usize, k.height as usize, true)
}

/// Composited image plus what the reverse pass needs.
#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Row-major `H × W × channels`, background already composited.
    pub color: Vec<f64>,
    pub final_transmittance: Vec<f64>,
    /// Number of splats blended into each pixel.
    pub n_contrib: Vec<u32>,
    pub background: Vec<f64>,
    /// Per pixel, one past the last tile-list position that contributed.
    last_item: Vec<u32>,
}

impl RenderOutput {
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let o = (y * self.width + x) * self.channels;
        &self.color[o..o + self.channels]
    }

    /// Accumulated opacity `1 - T` per pixel.
    pub fn alpha(&self) -> Vec<f64> {
        self.final_transmittance.iter().map(|t| 1.0 - t).collect()
    }
}

struct TilePixels {
    color: Vec<f64>,
    trans: Vec<f64>,
    count: Vec<u32>,
    last: Vec<u32>,
}

fn tile_bounds(frame: &SplatFrame, tile: usize) -> (usize, usize, usize, usize) {
    let tx = tile % frame.grid.nx;
    let ty = tile / frame.grid.nx;
    let x0 = tx * TILE_SIZE;
    let y0 = ty * TILE_SIZE;
    (
        x0,
        (x0 + TILE_SIZE).min(frame.width),
        y0,
        (y0 + TILE_SIZE).min(frame.height),
    )
}

/// Front-to-back blend: `C = Σ payloadᵢ αᵢ Πⱼ<ᵢ (1 - αⱼ) + T · background`.
///
/// `payload` holds `channels` values per splat in sorted order.
pub fn rasterize_forward(
    frame: &SplatFrame,
    payload: &[f64],
    channels: usize,
    background: &[f64],
) -> RenderOutput {
    assert_eq!(payload.len(), frame.len() * channels, "payload size");
    assert_eq!(background.len(), channels, "background size");
    let (w, h) = (frame.width, frame.height);
    let tiles: Vec<TilePixels> = (0..frame.grid.cell_count())
        .into_par_iter()
        .map(|tile| {
            let (x0, x1, y0, y1) = tile_bounds(frame, tile);
            let items = frame.grid.cell_items(tile);
            let n = (x1 - x0) * (y1 - y0);
            let mut out = TilePixels {
                color: vec![0.0; n * channels],
                trans: vec![1.0; n],
                count: vec![0; n],
                last: vec![0; n],
            };
            let mut p = 0;
            for y in y0..y1 {
                for x in x0..x1 {
                    let acc = &mut out.color[p * channels..(p + 1) * channels];
                    let mut t = 1.0;
                    for (pos, &si) in items.iter().enumerate() {
                        let s = &frame.splats[si as usize];
                        let dx = x as f64 - s.mean[0];
                        let dy = y as f64 - s.mean[1];
                        let power = gaussian_power(s.conic, dx, dy);
                        if power > 0.0 {
                            continue;
                        }
                        let alpha = (s.opacity * power.exp()).min(ALPHA_MAX);
                        if alpha < ALPHA_MIN {
                            continue;
                        }
                        let next_t = t * (1.0 - alpha);
                        if next_t < TRANSMITTANCE_MIN {
                            break;
                        }
                        let pl = &payload[si as usize * channels..(si as usize + 1) * channels];
                        for c in 0..channels {
                            acc[c] += pl[c] * alpha * t;
                        }
                        t = next_t;
                        out.count[p] += 1;
                        out.last[p] = pos as u32 + 1;
                    }
                    for c in 0..channels {
                        acc[c] += t * background[c];
                    }
                    out.trans[p] = t;
                    p += 1;
                }
            }
            out
        })
        .collect();

    let mut color = vec![0.0; w * h * channels];
    let mut final_transmittance = vec![1.0; w * h];
    let mut n_contrib = vec![0; w * h];
    let mut last_item = vec![0; w * h];
    for (tile, px) in tiles.into_iter().enumerate() {
        let (x0, x1, y0, y1) = tile_bounds(frame, tile);
        let mut p = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                let o = y * w + x;
                color[o * channels..(o + 1) * channels]
                    .copy_from_slice(&px.color[p * channels..(p + 1) * channels]);
                final_transmittance[o] = px.trans[p];
                n_contrib[o] = px.count[p];
                last_item[o] = px.last[p];
                p += 1;
            }
        }
    }
    RenderOutput {
        width: w,
        height: h,
        channels,
        color,
        final_transmittance,
        n_contrib,
        background: background.to_vec(),
        last_item,
    }
}

/// Gradients on the 2D splat parameters, indexed like `SplatFrame::splats`.
#[derive(Clone, Debug, PartialEq)]
pub struct SplatGrads {
    pub mean: Vec<[f64; 2]>,
    pub conic: Vec<[f64; 3]>,
    pub opacity: Vec<f64>,
    pub payload: Vec<f64>,
    pub channels: usize,
}

impl SplatGrads {
    pub fn zeros(n: usize, channels: usize) -> Self {
        SplatGrads {
            mean: vec![[0.0; 2]; n],
            conic: vec![[0.0; 3]; n],
            opacity: vec![0.0; n],
            payload: vec![0.0; n * channels],
            channels,
        }
    }
}

/// Reverse pass. Re-walks each pixel front to back, recovering the color
/// behind every contributor from the saved final color.
pub fn rasterize_backward(
    frame: &SplatFrame,
    payload: &[f64],
    out: &RenderOutput,
    d_color: &[f64],
) -> SplatGrads {
    let ch = out.channels;
    assert_eq!(d_color.len(), out.color.len(), "upstream gradient size");
    let w = frame.width;
    let partials: Vec<SplatGrads> = (0..frame.grid.cell_count())
        .into_par_iter()
        .map(|tile| {
            let (x0, x1, y0, y1) = tile_bounds(frame, tile);
            let items = frame.grid.cell_items(tile);
            let mut g = SplatGrads::zeros(items.len(), ch);
            let mut rest = vec![0.0; ch];
            for y in y0..y1 {
                for x in x0..x1 {
                    let o = y * w + x;
                    let up = &d_color[o * ch..(o + 1) * ch];
                    if up.iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    let last = out.last_item[o] as usize;
                    // color still to come behind the current splat, background included
                    rest.copy_from_slice(&out.color[o * ch..(o + 1) * ch]);
                    let mut t = 1.0;
                    for pos in 0..last {
                        let si = items[pos] as usize;
                        let s = &frame.splats[si];
                        let dx = x as f64 - s.mean[0];
                        let dy = y as f64 - s.mean[1];
                        let power = gaussian_power(s.conic, dx, dy);
                        if power > 0.0 {
                            continue;
                        }
                        let gauss = power.exp();
                        let raw = s.opacity * gauss;
                        let alpha = raw.min(ALPHA_MAX);
                        if alpha < ALPHA_MIN {
                            continue;
                        }
                        let pl = &payload[si * ch..(si + 1) * ch];
                        let weight = alpha * t;
                        let mut d_alpha = 0.0;
                        for c in 0..ch {
                            g.payload[pos * ch + c] += up[c] * weight;
                            rest[c] -= pl[c] * weight;
                            d_alpha += up[c] * (t * pl[c] - rest[c] / (1.0 - alpha));
                        }
                        t *= 1.0 - alpha;
                        if raw > ALPHA_MAX {
                            continue;
                        }
                        g.opacity[pos] += d_alpha * gauss;
                        let d_power = d_alpha * s.opacity * gauss;
                        let [a, b, c] = s.conic;
                        g.mean[pos][0] += d_power * (a * dx + b * dy);
                        g.mean[pos][1] += d_power * (b * dx + c * dy);
                        g.conic[pos][0] += d_power * (-0.5 * dx * dx);
                        g.conic[pos][1] += d_power * (-dx * dy);
                        g.conic[pos][2] += d_power * (-0.5 * dy * dy);
                    }
                }
            }
            g
        })
        .collect();

    let mut total = SplatGrads::zeros(frame.len(), ch);
    for (tile, part) in partials.iter().enumerate() {
        for (pos, &si) in frame.grid.cell_items(tile).iter().enumerate() {
            let si = si as usize;
            for k in 0..2 {
                total.mean[si][k] += part.mean[pos][k];
            }
            for k in 0..3 {
                total.conic[si][k] += part.conic[pos][k];
            }
            total.opacity[si] += part.opacity[pos];
            for c in 0..ch {
                total.payload[si * ch + c] += part.payload[pos * ch + c];
            }
        }
    }
    total
}

/// Chains splat-space gradients back to the cloud's geometry and opacity.
pub fn project_backward(
    frame: &SplatFrame,
    cloud: &GaussianCloud,
    pose: &RigidTransform,
    k: &Pinhole,
    grads: &SplatGrads,
    out: &mut CloudGrads,
) {
    assert_eq!(frame.geometry.len(), frame.len(), "frame lacks projection intermediates");
    let w_rot = pose.rotation_matrix();
    for (si, (s, geo)) in frame.splats.iter().zip(&frame.geometry).enumerate() {
        let i = s.index;
        let d_mean = grads.mean[si];
        let d_cov2 = conic_backward(&geo.cov2, grads.conic[si]);
        let (d_sigma, d_j) = splat_covariance_backward(&geo.sigma, &w_rot, &geo.jacobian, &d_cov2);
        let mut d_p = projection_jacobian_backward(&geo.p_cam, k, &d_j);
        d_p += geo.jacobian.transpose() * nalgebra::Vector2::new(d_mean[0], d_mean[1]);
        let d_mu = w_rot.transpose() * d_p;
        let scale = cloud.scale(i);
        let (d_q, d_s) = build_covariance_backward(cloud.rotation(i), &scale, &d_sigma);
        for a in 0..3 {
            out.means[3 * i + a] += d_mu[a];
            out.log_scales[3 * i + a] += d_s[a] * scale[a];
        }
        for a in 0..4 {
            out.rotations[4 * i + a] += d_q[a];
        }
        let o = sigmoid(cloud.opacity_logits[i]);
        out.opacity_logits[i] += grads.opacity[si] * o * (1.0 - o);
    }
}

/// Continuous-coordinate bins over the bounding box of all splat centers; used
/// for queries at arbitrary points rather than pixel centers.
pub fn point_grid(splats: &[Splat], cell: f64, max_cells_per_axis: usize) -> TileGrid {
    if splats.is_empty() {
        return TileGrid {
            origin: [0.0, 0.0],
            cell,
            nx: 1,
            ny: 1,
            ranges: vec![(0, 0)],
            items: Vec::new(),
        };
    }
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for s in splats {
        for k in 0..2 {
            lo[k] = lo[k].min(s.mean[k]);
            hi[k] = hi[k].max(s.mean[k]);
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let cell = cell.max(span / max_cells_per_axis as f64).max(1e-9);
    let nx = ((hi[0] - lo[0]) / cell).floor() as usize + 1;
    let ny = ((hi[1] - lo[1]) / cell).floor() as usize + 1;
    let spans: Vec<Option<[usize; 4]>> = splats
        .iter()
        .map(|s| {
            let ext = cutoff_extent(s.conic, s.opacity)?;
            let fx0 = ((s.mean[0] - ext[0] - lo[0]) / cell).floor().max(0.0);
            let fx1 = ((s.mean[0] + ext[0] - lo[0]) / cell).floor().min(nx as f64 - 1.0);
            let fy0 = ((s.mean[1] - ext[1] - lo[1]) / cell).floor().max(0.0);
            let fy1 = ((s.mean[1] + ext[1] - lo[1]) / cell).floor().min(ny as f64 - 1.0);
            if fx0 > fx1 || fy0 > fy1 {
                return None;
            }
            Some([fx0 as usize, fx1 as usize, fy0 as usize, fy1 as usize])
        })
        .collect();
    TileGrid::from_spans(nx, ny, lo, cell, &spans)
}

/// Projects without image clipping (for the sun view). Keeps every Gaussian
/// in front of the camera.
pub fn project_unclipped(cloud: &GaussianCloud, pose: &RigidTransform, k: &Pinhole) -> Vec<Splat> {
    let w_rot = pose.rotation_matrix();
    let mut splats: Vec<Splat> = (0..cloud.len())
        .into_par_iter()
        .filter_map(|i| project_gaussian(cloud, i, &w_rot, pose, k).map(|(s, _)| s))
        .collect();
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    splats
}
