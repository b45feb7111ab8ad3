//! Online training: keyframe-triggered rounds, Adam with per-group sawtooth
//! learning rates, and periodic densification.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::appearance::{AppearanceMlp, ShadowMlp};
use crate::checkpoint::{self, CheckpointMeta};
use crate::cloud::{logit, GaussianCloud, FEATURE_DIM, LATENT_DIM};
use crate::datagen::{Dataset, FrameData};
use crate::error::{Error, Result};
use crate::geom::{Pinhole, Quat, Vec3};
use crate::keyframes::KeyframeWindow;
use crate::loss::{isotropic_loss, photometric_loss, total_loss, LossBreakdown};
use crate::optim::{adam_direction, adam_step};
use crate::raster::ALPHA_MIN;
use crate::render::{ConfigId, Model, ModelGrads, View};

/// Base learning rates. `means` is multiplied by the scene radius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrTable {
    pub means: f64,
    pub rotations: f64,
    pub log_scales: f64,
    pub opacity: f64,
    pub features: f64,
    pub latents: f64,
    pub colors: f64,
    pub phi: f64,
    pub psi: f64,
}

impl Default for LrTable {
    fn default() -> Self {
        LrTable {
            means: 1.6e-4,
            rotations: 1e-3,
            log_scales: 5e-3,
            opacity: 5e-2,
            features: 2.5e-3,
            latents: 2.5e-3,
            colors: 2.5e-3,
            phi: 1e-3,
            psi: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DensifyConfig {
    /// Rounds between densify/prune passes; 0 disables them.
    pub every_rounds: u64,
    /// Mean screen-space positional gradient (normalized device units).
    pub grad_threshold: f64,
    /// Clone below, split above this max scale, as a fraction of scene radius.
    pub small_fraction: f64,
    pub prune_opacity: f64,
    /// Prune Gaussians whose largest scale exceeds this fraction of scene radius.
    pub max_scale_fraction: f64,
    pub max_gaussians: usize,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        DensifyConfig {
            every_rounds: 10,
            grad_threshold: 2e-4,
            small_fraction: 0.01,
            prune_opacity: 5e-3,
            max_scale_fraction: 0.1,
            max_gaussians: 50_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub config_id: ConfigId,
    /// Keyframe window capacity.
    pub window: usize,
    pub theta_view_deg: f64,
    pub lambda_ssim: f64,
    pub lambda_iso: f64,
    pub lr: LrTable,
    /// Learning-rate factor reached at the end of every round.
    pub lr_round_decay: f64,
    pub densify: DensifyConfig,
    pub n_init: usize,
    pub seed: u64,
    /// Stop after this many rounds.
    pub max_rounds: Option<u64>,
    /// Write `checkpoint_<round>.bin` every this many rounds.
    pub checkpoint_every: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            config_id: ConfigId::D,
            window: 10,
            theta_view_deg: 10.0,
            lambda_ssim: 0.2,
            lambda_iso: 10.0,
            lr: LrTable::default(),
            lr_round_decay: 0.1,
            densify: DensifyConfig::default(),
            n_init: 10_000,
            seed: 0,
            max_rounds: None,
            checkpoint_every: None,
        }
    }
}

impl RunConfig {
    /// Parses JSON, reporting the offending field path on failure.
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        Self::from_json(&crate::error::read_input(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, path: &str, msg: &str| if ok { Ok(()) } else { Err(Error::config(path, msg)) };
        check(self.window >= 3, "window", "must be at least 3")?;
        check(self.theta_view_deg > 0.0 && self.theta_view_deg < 180.0, "theta_view_deg", "must lie in (0, 180)")?;
        check((0.0..=1.0).contains(&self.lambda_ssim), "lambda_ssim", "must lie in [0, 1]")?;
        check(self.lambda_iso >= 0.0 && self.lambda_iso.is_finite(), "lambda_iso", "must be non-negative")?;
        check(self.lr_round_decay > 0.0 && self.lr_round_decay <= 1.0, "lr_round_decay", "must lie in (0, 1]")?;
        check(self.n_init >= 1, "n_init", "must be positive")?;
        let lr = &self.lr;
        for (name, v) in [
            ("means", lr.means),
            ("rotations", lr.rotations),
            ("log_scales", lr.log_scales),
            ("opacity", lr.opacity),
            ("features", lr.features),
            ("latents", lr.latents),
            ("colors", lr.colors),
            ("phi", lr.phi),
            ("psi", lr.psi),
        ] {
            check(v >= 0.0 && v.is_finite(), &format!("lr.{name}"), "must be a non-negative number")?;
        }
        let d = &self.densify;
        check(d.grad_threshold > 0.0, "densify.grad_threshold", "must be positive")?;
        check(d.small_fraction > 0.0, "densify.small_fraction", "must be positive")?;
        check((0.0..1.0).contains(&d.prune_opacity), "densify.prune_opacity", "must lie in [0, 1)")?;
        check(d.max_scale_fraction > 0.0, "densify.max_scale_fraction", "must be positive")?;
        check(d.max_gaussians >= 1, "densify.max_gaussians", "must be positive")?;
        check(self.checkpoint_every != Some(0), "checkpoint_every", "must be positive")?;
        Ok(())
    }
}

/// `lr0 · decay^(k/n)` for step `k` of an `n`-step round.
pub fn sawtooth_lr(lr0: f64, step_in_round: usize, steps_in_round: usize, decay: f64) -> f64 {
    if steps_in_round == 0 {
        return lr0;
    }
    lr0 * decay.powf(step_in_round as f64 / steps_in_round as f64)
}

/// Adam moments for every parameter group. Per-Gaussian moments reuse the
/// cloud layout so they follow densification and pruning.
#[derive(Clone, Debug)]
pub struct OptimState {
    pub m: GaussianCloud,
    pub v: GaussianCloud,
    pub phi_m: Vec<f64>,
    pub phi_v: Vec<f64>,
    pub psi_m: Vec<f64>,
    pub psi_v: Vec<f64>,
    pub gain_m: f64,
    pub gain_v: f64,
    pub t: u64,
}

fn zeros_like_cloud(c: &GaussianCloud) -> GaussianCloud {
    GaussianCloud {
        means: vec![0.0; c.means.len()],
        log_scales: vec![0.0; c.log_scales.len()],
        rotations: vec![0.0; c.rotations.len()],
        opacity_logits: vec![0.0; c.opacity_logits.len()],
        features: vec![0.0; c.features.len()],
        latents: vec![0.0; c.latents.len()],
        colors: c.colors.as_ref().map(|v| vec![0.0; v.len()]),
    }
}

impl OptimState {
    pub fn new(model: &Model) -> Self {
        OptimState {
            m: zeros_like_cloud(&model.cloud),
            v: zeros_like_cloud(&model.cloud),
            phi_m: vec![0.0; model.phi.net.param_count()],
            phi_v: vec![0.0; model.phi.net.param_count()],
            psi_m: vec![0.0; model.psi.net.param_count()],
            psi_v: vec![0.0; model.psi.net.param_count()],
            gain_m: 0.0,
            gain_v: 0.0,
            t: 0,
        }
    }

    /// Every per-Gaussian moment buffer matches the cloud.
    pub fn matches(&self, cloud: &GaussianCloud) -> bool {
        self.m.is_consistent()
            && self.v.is_consistent()
            && self.m.len() == cloud.len()
            && self.v.len() == cloud.len()
            && self.m.colors.is_some() == cloud.colors.is_some()
    }
}

/// Accumulated screen-space gradient norms since the last densification.
#[derive(Clone, Debug, Default)]
pub struct DensifyStats {
    pub grad_sum: Vec<f64>,
    pub count: Vec<u32>,
}

impl DensifyStats {
    pub fn new(n: usize) -> Self {
        DensifyStats {
            grad_sum: vec![0.0; n],
            count: vec![0; n],
        }
    }

    pub fn add(&mut self, mean2d: &[Option<f64>]) {
        for (i, g) in mean2d.iter().enumerate() {
            if let Some(g) = g {
                self.grad_sum[i] += g;
                self.count[i] += 1;
            }
        }
    }

    pub fn mean(&self, i: usize) -> f64 {
        if self.count[i] == 0 {
            0.0
        } else {
            self.grad_sum[i] / self.count[i] as f64
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// Clone small and split large high-gradient Gaussians, then prune faint or
/// oversized ones. Moments are copied for clones, zeroed for split children,
/// and dropped with pruned rows.
pub fn densify_and_prune(
    model: &mut Model,
    opt: &mut OptimState,
    stats: &DensifyStats,
    cfg: &DensifyConfig,
    means_lr: f64,
    rng: &mut impl Rng,
) -> DensifyReport {
    let cloud = &model.cloud;
    let n = cloud.len();
    let r = model.scene_radius;
    let small = cfg.small_fraction * r;
    let mut candidates: Vec<(usize, f64)> = (0..n)
        .map(|i| (i, stats.mean(i)))
        .filter(|(_, g)| *g > cfg.grad_threshold)
        .collect();
    // strongest gradients first when the cap binds
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut budget = cfg.max_gaussians.saturating_sub(n);
    let mut clone_ids = Vec::new();
    let mut split_ids = Vec::new();
    for (i, _) in candidates {
        let max_s = cloud.scale(i).max();
        if max_s <= small {
            if budget >= 1 {
                clone_ids.push(i);
                budget -= 1;
            }
        } else if budget >= 1 {
            split_ids.push(i);
            budget -= 1;
        }
    }
    clone_ids.sort_unstable();
    split_ids.sort_unstable();

    let mut clones = cloud.select(&clone_ids);
    let clone_m = opt.m.select(&clone_ids);
    let clone_v = opt.v.select(&clone_ids);
    for (k, &i) in clone_ids.iter().enumerate() {
        for a in 0..3 {
            clones.means[3 * k + a] += adam_direction(opt.m.means[3 * i + a], opt.v.means[3 * i + a], means_lr, opt.t);
        }
    }

    let mut children = cloud.select(&split_ids.iter().flat_map(|&i| [i, i]).collect::<Vec<_>>());
    for (k, &i) in split_ids.iter().enumerate() {
        let s = cloud.scale(i);
        let rot = Quat::from_array(cloud.rotation(i)).to_rotmat();
        let mu = cloud.mean(i);
        for c in 0..2 {
            let row = 2 * k + c;
            let z = Vec3::new(
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
            );
            let p = mu + rot * s.component_mul(&z);
            for a in 0..3 {
                children.means[3 * row + a] = p[a];
                children.log_scales[3 * row + a] = (s[a] / 1.6).ln();
            }
        }
    }
    let child_zero = zeros_like_cloud(&children);

    let mut keep: Vec<usize> = (0..n).filter(|i| split_ids.binary_search(i).is_err()).collect();
    let mut next = cloud.select(&keep);
    let mut next_m = opt.m.select(&keep);
    let mut next_v = opt.v.select(&keep);
    next.append(&clones);
    next_m.append(&clone_m);
    next_v.append(&clone_v);
    next.append(&children);
    next_m.append(&child_zero);
    next_v.append(&child_zero);

    let max_scale = cfg.max_scale_fraction * r;
    keep = (0..next.len())
        .filter(|&i| next.opacity(i) >= cfg.prune_opacity && next.scale(i).max() <= max_scale)
        .collect();
    let pruned = next.len() - keep.len();
    model.cloud = next.select(&keep);
    opt.m = next_m.select(&keep);
    opt.v = next_v.select(&keep);
    DensifyReport {
        cloned: clone_ids.len(),
        split: split_ids.len(),
        pruned,
    }
}

/// Mean distance from each point to its three nearest neighbors.
pub fn knn3_mean_distance(points: &[Vec3]) -> Vec<f64> {
    points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut best = [f64::INFINITY; 3];
            for (j, q) in points.iter().enumerate() {
                if i == j {
                    continue;
                }
                let d = (p - q).norm_squared();
                if d < best[2] {
                    best[2] = d;
                    best.sort_by(f64::total_cmp);
                }
            }
            let found: Vec<f64> = best.iter().filter(|d| d.is_finite()).map(|d| d.sqrt()).collect();
            if found.is_empty() {
                1.0
            } else {
                found.iter().sum::<f64>() / found.len() as f64
            }
        })
        .collect()
}

/// Gaussians at the given surface points: isotropic 3-NN scales, identity
/// rotations, opacity 0.1, small random features, zero latents.
pub fn initialize_cloud(points: &[Vec3], config: ConfigId, rng: &mut impl Rng) -> GaussianCloud {
    let n = points.len();
    let nn = knn3_mean_distance(points);
    let mut features = Vec::with_capacity(n * FEATURE_DIM);
    for _ in 0..n * FEATURE_DIM {
        let z: f64 = StandardNormal.sample(rng);
        features.push(0.01 * z);
    }
    GaussianCloud {
        means: points.iter().flat_map(|p| [p.x, p.y, p.z]).collect(),
        log_scales: nn.iter().flat_map(|d| [d.max(1e-6).ln(); 3]).collect(),
        rotations: (0..n).flat_map(|_| [1.0, 0.0, 0.0, 0.0]).collect(),
        opacity_logits: vec![logit(0.1); n],
        features,
        latents: vec![0.0; n * LATENT_DIM],
        colors: (!config.uses_appearance()).then(|| vec![0.0; 3 * n]),
    }
}

/// One NDJSON record per optimizer step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub round: u64,
    pub frame_id: usize,
    pub loss_total: f64,
    pub loss_l1: f64,
    pub loss_ssim: f64,
    pub loss_iso: f64,
    pub gaussian_count: usize,
    pub lr: f64,
}

pub struct Trainer {
    pub cfg: RunConfig,
    pub model: Model,
    pub opt: OptimState,
    pub window: KeyframeWindow,
    pub stats: DensifyStats,
    pub round: u64,
    pub steps: u64,
    pub frames_consumed: usize,
    pub k: Pinhole,
    frames: HashMap<usize, FrameData>,
    /// Distance of each window frame's camera from the object origin.
    distances: HashMap<usize, f64>,
}

/// Union of the foreground mask and the rendered coverage.
pub fn loss_region(mask: &[bool], alpha: &[f64]) -> Vec<bool> {
    mask.iter().zip(alpha).map(|(m, a)| *m || *a >= ALPHA_MIN).collect()
}

impl Trainer {
    /// Fresh model sampled from the dataset's target surface.
    pub fn new(dataset: &Dataset, cfg: RunConfig) -> Result<Trainer> {
        cfg.validate()?;
        let mesh = dataset.mesh()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let points: Vec<Vec3> = mesh.sample_surface(cfg.n_init, &mut rng)?.into_iter().map(|(p, _)| p).collect();
        let cloud = initialize_cloud(&points, cfg.config_id, &mut rng);
        let model = Model {
            config: cfg.config_id,
            cloud,
            phi: AppearanceMlp::new(&mut rng),
            psi: ShadowMlp::new(&mut rng),
            scene_radius: mesh.bounding_radius(),
            sun_distance: 1.0,
        };
        Ok(Self::with_model(cfg, model, dataset.k))
    }

    pub fn with_model(cfg: RunConfig, model: Model, k: Pinhole) -> Trainer {
        let opt = OptimState::new(&model);
        let n = model.cloud.len();
        Trainer {
            window: KeyframeWindow::new(cfg.window, cfg.theta_view_deg),
            cfg,
            opt,
            stats: DensifyStats::new(n),
            round: 0,
            steps: 0,
            frames_consumed: 0,
            k,
            frames: HashMap::new(),
            distances: HashMap::new(),
            model,
        }
    }

    /// Restores a checkpoint and replays keyframe admission over the frames
    /// it had consumed. Optimizer moments restart from zero.
    pub fn resume(dataset: &Dataset, path: &Path) -> Result<Trainer> {
        let (model, meta, cfg) = checkpoint::read(path)?;
        let frames = (meta.frames_consumed as usize).min(dataset.len());
        let (window, _) = replay_keyframes(dataset, cfg.window, cfg.theta_view_deg, frames)?;
        let mut t = Self::with_model(cfg, model, dataset.k);
        for id in window.frame_ids() {
            if let Some(rec) = dataset.manifest.frames.iter().find(|r| r.id == id) {
                t.distances.insert(id, rec.pose().camera_center().norm());
            }
        }
        t.window = window;
        t.round = meta.round;
        t.steps = meta.steps;
        t.frames_consumed = frames;
        Ok(t)
    }

    pub fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            round: self.round,
            steps: self.steps,
            frames_consumed: self.frames_consumed as u64,
        }
    }

    fn lr_groups(&self) -> LrTable {
        let mut lr = self.cfg.lr.clone();
        lr.means *= self.model.scene_radius;
        lr
    }

    fn median_window_distance(&self) -> f64 {
        let mut d: Vec<f64> = self.window.frame_ids().iter().filter_map(|i| self.distances.get(i).copied()).collect();
        if d.is_empty() {
            return self.model.sun_distance;
        }
        d.sort_by(f64::total_cmp);
        let m = d.len() / 2;
        if d.len() % 2 == 1 {
            d[m]
        } else {
            0.5 * (d[m - 1] + d[m])
        }
    }

    /// Feeds one frame through the keyframe rules; returns whether a round should run.
    pub fn ingest(&mut self, dataset: &Dataset, index: usize) -> Result<bool> {
        let rec = &dataset.manifest.frames[index];
        let out = self.window.ingest(rec.id, rec.view_vector())?;
        self.frames_consumed = index + 1;
        if let Some(ev) = out.evicted {
            self.frames.remove(&ev.frame_id);
            self.distances.remove(&ev.frame_id);
        }
        if out.admitted {
            self.frames.insert(rec.id, dataset.load(index)?);
            self.distances.insert(rec.id, rec.pose().camera_center().norm());
        }
        Ok(out.admitted && self.window.is_full())
    }

    fn ensure_loaded(&mut self, dataset: &Dataset) -> Result<()> {
        for id in self.window.frame_ids() {
            if !self.frames.contains_key(&id) {
                let idx = dataset
                    .manifest
                    .frames
                    .iter()
                    .position(|r| r.id == id)
                    .ok_or(Error::EmptyDataset)?;
                self.frames.insert(id, dataset.load(idx)?);
            }
        }
        Ok(())
    }

    /// One optimizer step on one frame.
    pub fn step(&mut self, frame: &FrameData, lr_factor: f64) -> Result<LossBreakdown> {
        let view = View {
            pose: frame.record.pose(),
            k: self.k,
            sun: frame.record.sun(),
        };
        let r = self.model.render(&view)?;
        let region = loss_region(&frame.mask, &r.alpha());
        let photo = photometric_loss(&r.image, &frame.image, &region, self.cfg.lambda_ssim)?;
        let mut grads = self.model.backward(&view, &r, &photo.grad)?;
        let iso = if self.cfg.config_id.uses_iso() {
            let scales: Vec<f64> = self.model.cloud.log_scales.iter().map(|l| l.exp()).collect();
            let (value, g) = isotropic_loss(&scales);
            let w = self.cfg.lambda_iso;
            for k in 0..scales.len() {
                grads.cloud.log_scales[k] += w * g[k] * scales[k];
            }
            Some(value)
        } else {
            None
        };
        self.apply(&grads, lr_factor);
        self.stats.add(&grads.mean2d);
        self.steps += 1;
        Ok(total_loss(&photo, iso, self.cfg.lambda_iso))
    }

    fn apply(&mut self, g: &ModelGrads<f32>, f: f64) {
        let lr = self.lr_groups();
        self.opt.t += 1;
        let t = self.opt.t;
        let c = &mut self.model.cloud;
        let (m, v) = (&mut self.opt.m, &mut self.opt.v);
        adam_step(&mut c.means, &g.cloud.means, &mut m.means, &mut v.means, lr.means * f, t);
        adam_step(&mut c.log_scales, &g.cloud.log_scales, &mut m.log_scales, &mut v.log_scales, lr.log_scales * f, t);
        adam_step(&mut c.rotations, &g.cloud.rotations, &mut m.rotations, &mut v.rotations, lr.rotations * f, t);
        adam_step(
            &mut c.opacity_logits,
            &g.cloud.opacity_logits,
            &mut m.opacity_logits,
            &mut v.opacity_logits,
            lr.opacity * f,
            t,
        );
        if self.model.config.uses_appearance() {
            adam_step(&mut c.features, &g.cloud.features, &mut m.features, &mut v.features, lr.features * f, t);
            adam_step(&mut self.model.phi.net.params, &g.phi, &mut self.opt.phi_m, &mut self.opt.phi_v, lr.phi * f, t);
        }
        if let (Some(col), Some(gc), Some(mc), Some(vc)) =
            (c.colors.as_mut(), g.cloud.colors.as_ref(), m.colors.as_mut(), v.colors.as_mut())
        {
            adam_step(col, gc, mc, vc, lr.colors * f, t);
        }
        if self.model.config.uses_shadow() {
            adam_step(&mut c.latents, &g.cloud.latents, &mut m.latents, &mut v.latents, lr.latents * f, t);
            adam_step(&mut self.model.psi.net.params, &g.psi, &mut self.opt.psi_m, &mut self.opt.psi_v, lr.psi * f, t);
            let mut gain = [self.model.psi.skip_gain];
            let mut gm = [self.opt.gain_m];
            let mut gv = [self.opt.gain_v];
            adam_step(&mut gain, &[g.psi_gain as f32], &mut gm, &mut gv, lr.psi * f, t);
            self.model.psi.skip_gain = gain[0];
            self.opt.gain_m = gm[0];
            self.opt.gain_v = gv[0];
        }
        let hi = self.model.scene_radius.ln();
        c.sanitize(1e-6f64.ln(), hi);
    }

    /// One step per window frame in a seeded random order, with the
    /// learning rate decaying across the round.
    pub fn training_round(&mut self, dataset: &Dataset, log: &mut dyn FnMut(LogRecord)) -> Result<()> {
        if !self.window.is_full() {
            return Err(Error::NotReady {
                have: self.window.len(),
                need: self.window.capacity(),
            });
        }
        self.ensure_loaded(dataset)?;
        self.round += 1;
        self.model.sun_distance = self.median_window_distance();
        let mut order = self.window.frame_ids();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ self.round.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);
        let n = order.len();
        for (k, id) in order.into_iter().enumerate() {
            let f = sawtooth_lr(1.0, k, n, self.cfg.lr_round_decay);
            let frame = self.frames.get(&id).cloned().expect("window frame loaded");
            let loss = self.step(&frame, f)?;
            log(LogRecord {
                round: self.round,
                frame_id: id,
                loss_total: loss.total,
                loss_l1: loss.l1,
                loss_ssim: loss.ssim_term,
                loss_iso: loss.iso,
                gaussian_count: self.model.cloud.len(),
                lr: self.cfg.lr.phi * f,
            });
        }
        let every = self.cfg.densify.every_rounds;
        if every > 0 && self.round % every == 0 {
            let means_lr = self.lr_groups().means;
            let rep = densify_and_prune(&mut self.model, &mut self.opt, &self.stats, &self.cfg.densify, means_lr, &mut rng);
            log::debug!(
                "round {}: cloned {}, split {}, pruned {} -> {} gaussians",
                self.round,
                rep.cloned,
                rep.split,
                rep.pruned,
                self.model.cloud.len()
            );
            self.stats = DensifyStats::new(self.model.cloud.len());
        }
        Ok(())
    }
}

/// Window state after feeding the first `frames` frames through the keyframe
/// rules, plus the id of every frame admitted along the way.
pub fn replay_keyframes(
    dataset: &Dataset,
    capacity: usize,
    theta_view_deg: f64,
    frames: usize,
) -> Result<(KeyframeWindow, BTreeSet<usize>)> {
    let mut window = KeyframeWindow::new(capacity, theta_view_deg);
    let mut admitted = BTreeSet::new();
    for rec in dataset.manifest.frames.iter().take(frames) {
        if window.ingest(rec.id, rec.view_vector())?.admitted {
            admitted.insert(rec.id);
        }
    }
    Ok((window, admitted))
}

/// Written next to the final checkpoint as `train_summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub config_id: ConfigId,
    pub rounds: u64,
    /// Steps taken by this invocation (excludes steps before a resume).
    pub steps: u64,
    pub seconds: f64,
    pub steps_per_sec: f64,
    pub gaussian_count: usize,
}

pub const SUMMARY_FILE: &str = "train_summary.json";

/// Result of a training run.
pub struct TrainOutcome {
    pub trainer: Trainer,
    pub summary: TrainSummary,
    pub log_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

/// Streams the dataset through the keyframe window, runs a round on every
/// composition change once the window is full, and writes the final
/// checkpoint and NDJSON log to `out_dir`.
pub fn run_training(dataset: &Dataset, mut trainer: Trainer, out_dir: &Path) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    let log_path = out_dir.join("train_log.ndjson");
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(trainer.round > 0)
        .write(true)
        .truncate(trainer.round == 0)
        .open(&log_path)
        .map_err(|e| Error::io(format!("opening {}", log_path.display()), e))?;
    let mut writer = BufWriter::new(file);
    let mut io_err: Option<std::io::Error> = None;
    let start = std::time::Instant::now();
    let first_step = trainer.steps;
    for index in trainer.frames_consumed..dataset.len() {
        if trainer.cfg.max_rounds.is_some_and(|m| trainer.round >= m) {
            break;
        }
        if trainer.ingest(dataset, index)? {
            trainer.training_round(dataset, &mut |rec| {
                let line = serde_json::to_string(&rec).expect("record serializes");
                if let Err(e) = writeln!(writer, "{line}") {
                    io_err.get_or_insert(e);
                }
            })?;
            if let Some(every) = trainer.cfg.checkpoint_every {
                if trainer.round % every == 0 {
                    let p = out_dir.join(format!("checkpoint_{:06}.bin", trainer.round));
                    checkpoint::write(&p, &trainer.model, &trainer.meta(), &trainer.cfg)?;
                }
            }
        }
    }
    if let Some(e) = io_err {
        return Err(Error::io(format!("writing {}", log_path.display()), e));
    }
    writer.flush().map_err(|e| Error::io(format!("writing {}", log_path.display()), e))?;
    let secs = start.elapsed().as_secs_f64();
    let steps = trainer.steps - first_step;
    log::info!(
        "{} rounds, {} steps in {:.1}s ({:.2} steps/s), {} gaussians",
        trainer.round,
        steps,
        secs,
        steps as f64 / secs.max(1e-9),
        trainer.model.cloud.len()
    );
    let checkpoint_path = out_dir.join("checkpoint.bin");
    checkpoint::write(&checkpoint_path, &trainer.model, &trainer.meta(), &trainer.cfg)?;
    let summary = TrainSummary {
        config_id: trainer.cfg.config_id,
        rounds: trainer.round,
        steps,
        seconds: secs,
        steps_per_sec: steps as f64 / secs.max(1e-9),
        gaussian_count: trainer.model.cloud.len(),
    };
    let summary_path = out_dir.join(SUMMARY_FILE);
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(&summary_path, text + "\n").map_err(|e| Error::io(format!("writing {}", summary_path.display()), e))?;
    Ok(TrainOutcome {
        trainer,
        summary,
        log_path,
        checkpoint_path,
    })
}
