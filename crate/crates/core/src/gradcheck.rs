//! Central-difference checks of every hand-written reverse pass.
//!
//! Each suite draws a random scalar objective `L = Σ w ⊙ output`, runs the
//! analytic backward pass once, and compares selected coordinates against
//! numeric derivatives. Coordinates whose stencil straddles a threshold (the
//! two step sizes disagree) are counted as skipped rather than compared.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::appearance::{AppearanceMlp, ShadowMlp};
use crate::cloud::{logit, GaussianCloud, FEATURE_DIM, LATENT_DIM};
use crate::geom::{
    build_covariance, build_covariance_backward, conic_backward, conic_of, projection_jacobian,
    projection_jacobian_backward, project_camera_point, quat_to_rotmat, quat_to_rotmat_backward, splat_covariance,
    splat_covariance_backward, Mat2, Mat23, Mat3, Pinhole, RigidTransform, Vec3,
};
use crate::image::Image;
use crate::loss::{isotropic_loss, l1_loss, photometric_loss, ssim_with_grad};
use crate::raster::{rasterize_backward, rasterize_forward, Splat, SplatFrame};
use crate::render::{ConfigId, Model, View};
use crate::shadow::{apply_shadow, apply_shadow_backward};

pub const REL_TOL: f64 = 1e-3;
pub const ABS_TOL: f64 = 1e-6;

pub const SUITES: [&str; 7] = [
    "geometry",
    "rasterizer",
    "appearance",
    "shadow_mlp",
    "losses",
    "shadow_multiply",
    "pipeline",
];

#[derive(Clone, Copy, Debug)]
pub struct GradcheckOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Analytic gradients are scaled by `1 + corrupt` before comparison.
    /// Nonzero values serve as a negative control.
    pub corrupt: f64,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            rel_tol: REL_TOL,
            abs_tol: ABS_TOL,
            corrupt: 0.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub checked: usize,
    pub skipped: usize,
    /// `max |a - n| / max(|a|, |n|, abs_tol / rel_tol)` over checked coordinates.
    pub max_rel_err: f64,
    pub worst: String,
    pub passed: bool,
}

struct Suite<'o> {
    opts: &'o GradcheckOptions,
    report: SuiteReport,
}

impl<'o> Suite<'o> {
    fn new(name: &str, opts: &'o GradcheckOptions) -> Self {
        Suite {
            opts,
            report: SuiteReport {
                name: name.to_string(),
                checked: 0,
                skipped: 0,
                max_rel_err: 0.0,
                worst: String::new(),
                passed: false,
            },
        }
    }

    /// `f(δ)` evaluates the objective with the probed coordinate shifted by `δ`.
    fn probe(&mut self, label: impl FnOnce() -> String, analytic: f64, h: f64, mut f: impl FnMut(f64) -> f64) {
        let d1 = (f(h) - f(-h)) / (2.0 * h);
        let d2 = (f(0.5 * h) - f(-0.5 * h)) / h;
        let scale = d1.abs().max(d2.abs());
        if !d1.is_finite() || !d2.is_finite() || (d1 - d2).abs() > self.opts.abs_tol + 1e-2 * scale {
            self.report.skipped += 1;
            return;
        }
        let numeric = (4.0 * d2 - d1) / 3.0;
        let a = analytic * (1.0 + self.opts.corrupt);
        let floor = self.opts.abs_tol / self.opts.rel_tol;
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        self.report.checked += 1;
        if err > self.report.max_rel_err || !err.is_finite() {
            self.report.max_rel_err = if err.is_finite() { err } else { f64::INFINITY };
            self.report.worst = format!("{} (analytic {a:.6e}, numeric {numeric:.6e})", label());
        }
    }

    fn finish(mut self) -> SuiteReport {
        let r = &mut self.report;
        r.passed = r.checked > 0 && r.max_rel_err <= self.opts.rel_tol && r.skipped <= r.checked;
        self.report
    }
}

fn weights(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn shifted(x: &[f64], i: usize, d: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    y[i] += d;
    y
}

/// At most `k` distinct indices below `n`, in increasing order.
fn pick(rng: &mut impl Rng, n: usize, k: usize) -> Vec<usize> {
    let mut v = sample(rng, n, k.min(n)).into_vec();
    v.sort_unstable();
    v
}

fn mat_dot<const R: usize, const C: usize>(
    a: &nalgebra::SMatrix<f64, R, C>,
    b: &nalgebra::SMatrix<f64, R, C>,
) -> f64 {
    a.component_mul(b).sum()
}

fn random_mat3(rng: &mut impl Rng) -> Mat3 {
    Mat3::from_fn(|_, _| rng.random_range(-1.0..1.0))
}

fn geometry(opts: &GradcheckOptions) -> SuiteReport {
    let mut s = Suite::new("geometry", opts);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let k = Pinhole::new(120.0, 110.0, 32.0, 30.0, 64, 60).unwrap();
    for trial in 0..4 {
        let p = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(2.0..5.0));

        // projection
        let w2 = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let j = projection_jacobian(&p, &k).unwrap();
        let a = j.transpose() * nalgebra::Vector2::new(w2[0], w2[1]);
        for i in 0..3 {
            s.probe(|| format!("project[{trial}].p{i}"), a[i], 1e-5, |d| {
                let mut q = p;
                q[i] += d;
                let (u, v, _) = project_camera_point(&q, &k).unwrap();
                w2[0] * u + w2[1] * v
            });
        }

        // projection Jacobian
        let wj = Mat23::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let a = projection_jacobian_backward(&p, &k, &wj);
        for i in 0..3 {
            s.probe(|| format!("jacobian[{trial}].p{i}"), a[i], 1e-5, |d| {
                let mut q = p;
                q[i] += d;
                mat_dot(&projection_jacobian(&q, &k).unwrap(), &wj)
            });
        }

        // quaternion to rotation
        let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let wr = random_mat3(&mut rng);
        let a = quat_to_rotmat_backward(q, &wr);
        for i in 0..4 {
            s.probe(|| format!("quat[{trial}].q{i}"), a[i], 1e-5, |d| {
                let mut qq = q;
                qq[i] += d;
                mat_dot(&quat_to_rotmat(qq), &wr)
            });
        }

        // 3D covariance
        let sc = Vec3::new(rng.random_range(0.1..1.0), rng.random_range(0.1..1.0), rng.random_range(0.1..1.0));
        let ws = random_mat3(&mut rng);
        let (aq, a_s) = build_covariance_backward(q, &sc, &ws);
        for i in 0..4 {
            s.probe(|| format!("cov3d[{trial}].q{i}"), aq[i], 1e-5, |d| {
                let mut qq = q;
                qq[i] += d;
                mat_dot(&build_covariance(qq, &sc), &ws)
            });
        }
        for i in 0..3 {
            s.probe(|| format!("cov3d[{trial}].s{i}"), a_s[i], 1e-5, |d| {
                let mut ss = sc;
                ss[i] += d;
                mat_dot(&build_covariance(q, &ss), &ws)
            });
        }

        // splat covariance
        let sigma = build_covariance(q, &sc);
        let w_rot = quat_to_rotmat(std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
        let wc = Mat2::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let (d_sigma, d_j) = splat_covariance_backward(&sigma, &w_rot, &j, &wc);
        for r in 0..3 {
            for c in 0..3 {
                s.probe(|| format!("cov2d[{trial}].sigma{r}{c}"), d_sigma[(r, c)], 1e-5, |d| {
                    let mut sg = sigma;
                    sg[(r, c)] += d;
                    mat_dot(&splat_covariance(&sg, &w_rot, &j).unwrap(), &wc)
                });
            }
        }
        for r in 0..2 {
            for c in 0..3 {
                s.probe(|| format!("cov2d[{trial}].J{r}{c}"), d_j[(r, c)], 1e-5, |d| {
                    let mut jj = j;
                    jj[(r, c)] += d;
                    mat_dot(&splat_covariance(&sigma, &w_rot, &jj).unwrap(), &wc)
                });
            }
        }

        // conic; the covariance stays symmetric, so off-diagonals move together
        let cov = splat_covariance(&sigma, &w_rot, &j).unwrap();
        let wk = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let g = conic_backward(&cov, wk);
        let conic_obj = |c: Mat2| dot(&conic_of(&c), &wk);
        s.probe(|| format!("conic[{trial}].c00"), g[(0, 0)], 1e-6, |d| {
            conic_obj(cov + Mat2::new(d, 0.0, 0.0, 0.0))
        });
        s.probe(|| format!("conic[{trial}].c11"), g[(1, 1)], 1e-6, |d| {
            conic_obj(cov + Mat2::new(0.0, 0.0, 0.0, d))
        });
        s.probe(|| format!("conic[{trial}].c01"), g[(0, 1)] + g[(1, 0)], 1e-6, |d| {
            conic_obj(cov + Mat2::new(0.0, d, d, 0.0))
        });
    }
    s.finish()
}

/// Up to eight splats on an 8×8 image, already in depth order.
fn random_splats(rng: &mut impl Rng, n: usize) -> Vec<Splat> {
    (0..n)
        .map(|i| {
            let sx: f64 = rng.random_range(0.8..2.5);
            let sy: f64 = rng.random_range(0.8..2.5);
            let rho: f64 = rng.random_range(-0.6..0.6);
            let cov = Mat2::new(sx * sx, rho * sx * sy, rho * sx * sy, sy * sy);
            Splat {
                index: i,
                mean: [rng.random_range(0.0..8.0), rng.random_range(0.0..8.0)],
                conic: conic_of(&cov),
                depth: 1.0 + i as f64,
                opacity: rng.random_range(0.2..0.9),
            }
        })
        .collect()
}

fn rasterizer(opts: &GradcheckOptions) -> SuiteReport {
    let mut s = Suite::new("rasterizer", opts);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(1));
    let (w, h, ch) = (8, 8, 3);
    for trial in 0..4 {
        let n = 3 + trial;
        let splats = random_splats(&mut rng, n);
        let payload: Vec<f64> = (0..n * ch).map(|_| rng.random_range(0.0..1.0)).collect();
        let bg: Vec<f64> = (0..ch).map(|_| rng.random_range(0.0..1.0)).collect();
        let wts = weights(&mut rng, w * h * ch);
        let objective = |sp: &[Splat], pl: &[f64]| {
            let frame = SplatFrame::from_splats(sp.to_vec(), w, h);
            dot(&rasterize_forward(&frame, pl, ch, &bg).color, &wts)
        };
        let frame = SplatFrame::from_splats(splats.clone(), w, h);
        let out = rasterize_forward(&frame, &payload, ch, &bg);
        let g = rasterize_backward(&frame, &payload, &out, &wts);
        let hstep = 1e-4;
        for i in 0..n {
            for a in 0..2 {
                s.probe(|| format!("raster[{trial}].mean{i}.{a}"), g.mean[i][a], hstep, |d| {
                    let mut sp = splats.clone();
                    sp[i].mean[a] += d;
                    objective(&sp, &payload)
                });
            }
            for a in 0..3 {
                s.probe(|| format!("raster[{trial}].conic{i}.{a}"), g.conic[i][a], hstep, |d| {
                    let mut sp = splats.clone();
                    sp[i].conic[a] += d;
                    objective(&sp, &payload)
                });
            }
            s.probe(|| format!("raster[{trial}].opacity{i}"), g.opacity[i], hstep, |d| {
                let mut sp = splats.clone();
                sp[i].opacity += d;
                objective(&sp, &payload)
            });
            for c in 0..ch {
                let k = i * ch + c;
                s.probe(|| format!("raster[{trial}].payload{i}.{c}"), g.payload[k], hstep, |d| {
                    objective(&splats, &shifted(&payload, k, d))
                });
            }
        }
    }
    s.finish()
}

fn appearance(opts: &GradcheckOptions) -> SuiteReport {
    let mut s = Suite::new("appearance", opts);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(2));
    let phi: AppearanceMlp<f64> = AppearanceMlp::new(&mut rng);
    let n = 3;
    let feats: Vec<f64> = (0..n * FEATURE_DIM).map(|_| rng.random_range(-0.5..0.5)).collect();
    let sun = Vec3::new(0.3, 0.8, -0.5).normalize();
    let views: Vec<Vec3> = (0..n)
        .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize())
        .collect();
    let wts = weights(&mut rng, 3 * n);
    let (_, cache) = phi.forward(&feats, &sun, &views);
    let mut gp = vec![0.0; phi.net.param_count()];
    let (d_feat, d_view) = phi.backward(&cache, &wts, &mut gp);
    let h = 1e-5;
    for k in pick(&mut rng, phi.net.param_count(), 60) {
        s.probe(|| format!("phi.param{k}"), gp[k], h, |d| {
            let mut m = phi.clone();
            m.net.params[k] += d;
            dot(&m.infer(&feats, &sun, &views), &wts)
        });
    }
    for k in pick(&mut rng, feats.len(), 24) {
        s.probe(|| format!("phi.feature{k}"), d_feat[k], h, |d| {
            dot(&phi.infer(&shifted(&feats, k, d), &sun, &views), &wts)
        });
    }
    for i in 0..n {
        for a in 0..3 {
            s.probe(|| format!("phi.view{i}.{a}"), d_view[i][a], h, |d| {
                let mut v = views.clone();
                v[i][a] += d;
                dot(&phi.infer(&feats, &sun, &v), &wts)
            });
        }
    }
    s.finish()
}

fn shadow_mlp(opts: &GradcheckOptions) -> SuiteReport {
    let mut s = Suite::new("shadow_mlp", opts);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(3));
    let mut psi: ShadowMlp<f64> = ShadowMlp::new(&mut rng);
    // the head starts at zero; give it weight so upstream layers matter
    let last = psi.net.num_layers() - 1;
    for w in psi.net.layer_weights_mut(last) {
        *w = rng.random_range(-0.5..0.5);
    }
    psi.skip_gain = 0.8;
    let n = 4;
    let vis: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..0.9)).collect();
    let pos: Vec<Vec3> = (0..n)
        .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let lat: Vec<f64> = (0..n * LATENT_DIM).map(|_| rng.random_range(-0.5..0.5)).collect();
    let sun = Vec3::new(-0.2, 0.4, 0.9).normalize();
    let wts = weights(&mut rng, n);
    let (_, cache) = psi.forward(&vis, &sun, &pos, &lat);
    let mut gp = vec![0.0; psi.net.param_count()];
    let (d_vis, d_pos, d_lat, d_gain) = psi.backward(&cache, &wts, &mut gp);
    let h = 1e-5;
    for k in pick(&mut rng, psi.net.param_count(), 60) {
        s.probe(|| format!("psi.param{k}"), gp[k], h, |d| {
            let mut m = psi.clone();
            m.net.params[k] += d;
            dot(&m.infer(&vis, &sun, &pos, &lat), &wts)
        });
    }
    for i in 0..n {
        s.probe(|| format!("psi.vis{i}"), d_vis[i], h, |d| {
            dot(&psi.infer(&shifted(&vis, i, d), &sun, &pos, &lat), &wts)
        });
        for a in 0..3 {
            s.probe(|| format!("psi.pos{i}.{a}"), d_pos[i][a], h, |d| {
                let mut p = pos.clone();
                p[i][a] += d;
                dot(&psi.infer(&vis, &sun, &p, &lat), &wts)
            });
        }
    }
    for k in 0..lat.len() {
        s.probe(|| format!("psi.latent{k}"), d_lat[k], h, |d| {
            dot(&psi.infer(&vis, &sun, &pos, &shifted(&lat, k, d)), &wts)
        });
    }
    s.probe(|| "psi.gain".into(), d_gain, h, |d| {
        let mut m = psi.clone();
        m.skip_gain += d;
        dot(&m.infer(&vis, &sun, &pos, &lat), &wts)
    });
    s.finish()
}

fn random_image(rng: &mut impl Rng, w: usize, h: usize, ch: usize) -> Image {
    Image::from_data(w, h, ch, (0..w * h * ch).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

fn with_entry(img: &Image, k: usize, d: f64) -> Image {
    let mut out = img.clone();
    out.data[k] += d;
    out
}

fn losses(opts: &GradcheckOptions) -> SuiteReport {
    let mut s = Suite::new("losses", opts);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(4));
    let (w, h) = (14, 13);
    let pred = random_image(&mut rng, w, h, 3);
    let gt = random_image(&mut rng, w, h, 3);
    let region: Vec<bool> = (0..w * h).map(|_| rng.random_bool(0.7)).collect();
    let hs = 1e-5;

    let (_, g) = l1_loss(&pred, &gt, &region).unwrap();
    for k in pick(&mut rng, pred.data.len(), 40) {
        s.probe(|| format!("l1.px{k}"), g[k], hs, |d| l1_loss(&with_entry(&pred, k, d), &gt, &region).unwrap().0);
    }

    let (_, g) = ssim_with_grad(&pred, &gt).unwrap();
    for k in pick(&mut rng, pred.data.len(), 40) {
        s.probe(|| format!("ssim.px{k}"), g[k], hs, |d| ssim_with_grad(&with_entry(&pred, k, d), &gt).unwrap().0);
    }

    let photo = photometric_loss(&pred, &gt, &region, 0.2).unwrap();
    for k in pick(&mut rng, pred.data.len(), 40) {
        s.probe(|| format!("photometric.px{k}"), photo.grad[k], hs, |d| {
            photometric_loss(&with_entry(&pred, k, d), &gt, &region, 0.2).unwrap().total
        });
    }

    let scales: Vec<f64> = (0..3 * 10).map(|_| rng.random_range(0.01..0.5)).collect();
    let (_, g) = isotropic_loss(&scales);
    for k in 0..scales.len() {
        s.probe(|| format!("iso.s{k}"), g[k], 1e-6, |d| isotropic_loss(&shifted(&scales, k, d)).0);
    }
    s.finish()
}

fn shadow_multiply(opts: &GradcheckOptions) -> SuiteReport {
    let mut s = Suite::new("shadow_multiply", opts);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(5));
    let (w, h) = (6, 5);
    let color = random_image(&mut rng, w, h, 3);
    let shadow = random_image(&mut rng, w, h, 1);
    let wts = weights(&mut rng, w * h * 3);
    let (dc, ds) = apply_shadow_backward(&color, &shadow, &wts).unwrap();
    let obj = |c: &Image, sh: &Image| dot(&apply_shadow(c, sh).unwrap().data, &wts);
    for k in 0..color.data.len() {
        s.probe(|| format!("multiply.color{k}"), dc[k], 1e-5, |d| obj(&with_entry(&color, k, d), &shadow));
    }
    for k in 0..shadow.data.len() {
        s.probe(|| format!("multiply.shadow{k}"), ds[k], 1e-5, |d| obj(&color, &with_entry(&shadow, k, d)));
    }
    s.finish()
}

/// Small random double-precision model clustered in front of an 8×8 camera.
pub fn random_model(config: ConfigId, n: usize, rng: &mut impl Rng) -> Model<f64> {
    let mut u = |a: f64, b: f64| rng.random_range(a..b);
    let cloud = GaussianCloud {
        means: (0..3 * n).map(|_| u(-0.5, 0.5)).collect(),
        log_scales: (0..3 * n).map(|_| u(0.08f64.ln(), 0.3f64.ln())).collect(),
        rotations: (0..4 * n).map(|_| u(-1.0, 1.0)).collect(),
        opacity_logits: (0..n).map(|_| logit(u(0.2, 0.8))).collect(),
        features: (0..FEATURE_DIM * n).map(|_| u(-0.5, 0.5)).collect(),
        latents: (0..LATENT_DIM * n).map(|_| u(-0.5, 0.5)).collect(),
        colors: (!config.uses_appearance()).then(|| (0..3 * n).map(|_| u(-1.0, 1.0)).collect()),
    };
    let mut psi = ShadowMlp::new(rng);
    let last = psi.net.num_layers() - 1;
    for w in psi.net.layer_weights_mut(last) {
        *w = rng.random_range(-0.5..0.5);
    }
    Model {
        config,
        cloud,
        phi: AppearanceMlp::new(rng),
        psi,
        scene_radius: 1.0,
        sun_distance: 4.0,
    }
}

pub fn small_view() -> View {
    View {
        pose: RigidTransform::look_at(&Vec3::new(0.3, -0.2, 3.0), &Vec3::zeros(), &Vec3::y()),
        k: Pinhole::new(12.0, 12.0, 4.0, 4.0, 8, 8).unwrap(),
        sun: Vec3::new(0.5, 0.7, 0.5).normalize(),
    }
}

fn pipeline(opts: &GradcheckOptions) -> SuiteReport {
    let mut s = Suite::new("pipeline", opts);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(6));
    let view = small_view();
    for config in ConfigId::ALL {
        let model = random_model(config, 6, &mut rng);
        let r = model.render(&view).unwrap();
        // the sun pass is not differentiated; hold it at the base value
        let vis = r.shadow.as_ref().map(|sh| sh.visibility.clone());
        let wts = weights(&mut rng, r.image.data.len());
        let g = model.backward(&view, &r, &wts).unwrap();
        let eval = |m: &Model<f64>| dot(&m.render_with_visibility(&view, vis.as_deref()).unwrap().image.data, &wts);
        let h = 1e-5;
        let rendered: Vec<usize> = {
            let mut v: Vec<usize> = r.frame.splats.iter().map(|sp| sp.index).collect();
            v.sort_unstable();
            v
        };
        for &i in rendered.iter().take(3) {
            for a in 0..3 {
                let k = 3 * i + a;
                s.probe(|| format!("{config}.mean{i}.{a}"), g.cloud.means[k], h, |d| {
                    let mut m = model.clone();
                    m.cloud.means[k] += d;
                    eval(&m)
                });
                s.probe(|| format!("{config}.log_scale{i}.{a}"), g.cloud.log_scales[k], h, |d| {
                    let mut m = model.clone();
                    m.cloud.log_scales[k] += d;
                    eval(&m)
                });
            }
            for a in 0..4 {
                let k = 4 * i + a;
                s.probe(|| format!("{config}.rotation{i}.{a}"), g.cloud.rotations[k], h, |d| {
                    let mut m = model.clone();
                    m.cloud.rotations[k] += d;
                    eval(&m)
                });
            }
            s.probe(|| format!("{config}.opacity{i}"), g.cloud.opacity_logits[i], h, |d| {
                let mut m = model.clone();
                m.cloud.opacity_logits[i] += d;
                eval(&m)
            });
            if config.uses_appearance() {
                for a in pick(&mut rng, FEATURE_DIM, 4) {
                    let k = FEATURE_DIM * i + a;
                    s.probe(|| format!("{config}.feature{i}.{a}"), g.cloud.features[k], h, |d| {
                        let mut m = model.clone();
                        m.cloud.features[k] += d;
                        eval(&m)
                    });
                }
            } else {
                for a in 0..3 {
                    let k = 3 * i + a;
                    let gc = g.cloud.colors.as_ref().unwrap()[k];
                    s.probe(|| format!("{config}.color{i}.{a}"), gc, h, |d| {
                        let mut m = model.clone();
                        m.cloud.colors.as_mut().unwrap()[k] += d;
                        eval(&m)
                    });
                }
            }
            if config.uses_shadow() {
                for a in 0..LATENT_DIM {
                    let k = LATENT_DIM * i + a;
                    s.probe(|| format!("{config}.latent{i}.{a}"), g.cloud.latents[k], h, |d| {
                        let mut m = model.clone();
                        m.cloud.latents[k] += d;
                        eval(&m)
                    });
                }
            }
        }
        if config.uses_appearance() {
            for k in pick(&mut rng, model.phi.net.param_count(), 10) {
                s.probe(|| format!("{config}.phi{k}"), g.phi[k], h, |d| {
                    let mut m = model.clone();
                    m.phi.net.params[k] += d;
                    eval(&m)
                });
            }
        }
        if config.uses_shadow() {
            for k in pick(&mut rng, model.psi.net.param_count(), 10) {
                s.probe(|| format!("{config}.psi{k}"), g.psi[k], h, |d| {
                    let mut m = model.clone();
                    m.psi.net.params[k] += d;
                    eval(&m)
                });
            }
            s.probe(|| format!("{config}.psi_gain"), g.psi_gain, h, |d| {
                let mut m = model.clone();
                m.psi.skip_gain += d;
                eval(&m)
            });
        }
    }
    s.finish()
}

pub fn run_suite(name: &str, opts: &GradcheckOptions) -> Option<SuiteReport> {
    Some(match name {
        "geometry" => geometry(opts),
        "rasterizer" => rasterizer(opts),
        "appearance" => appearance(opts),
        "shadow_mlp" => shadow_mlp(opts),
        "losses" => losses(opts),
        "shadow_multiply" => shadow_multiply(opts),
        "pipeline" => pipeline(opts),
        _ => return None,
    })
}

pub fn run_all(opts: &GradcheckOptions) -> Vec<SuiteReport> {
    SUITES.iter().map(|n| run_suite(n, opts).unwrap()).collect()
}
