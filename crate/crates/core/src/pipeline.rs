//! Command implementations behind the `sunsplat` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::datagen::dataset::Intrinsics;
use crate::datagen::{generate_dataset, DatagenConfig, Dataset, TargetMesh};
use crate::error::{read_input, Error, Result};
use crate::geom::{Quat, RigidTransform, Vec3};
use crate::gradcheck::{run_all, GradcheckOptions, SuiteReport};
use crate::image::Image;
use crate::loss::{psnr, psnr_masked, ssim, ssim_masked};
use crate::render::{ConfigId, Model, View};
use crate::train::{replay_keyframes, run_training, RunConfig, TrainOutcome, TrainSummary, Trainer, SUMMARY_FILE};

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_input(path)?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        Error::config(format!("{}: {field}", path.display()), e.into_inner().to_string())
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        context: path.display().to_string(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

/// Writes the canonical target's dataset. Without a config file the defaults apply.
pub fn cmd_generate(config: Option<&Path>, out: &Path, seed: u64) -> Result<()> {
    let cfg: DatagenConfig = match config {
        Some(p) => read_json(p)?,
        None => DatagenConfig::default(),
    };
    cfg.validate()?;
    generate_dataset(&TargetMesh::canonical(), &cfg, out, seed)
}

/// Trains from scratch, or continues from `resume`. A `seed` overrides the
/// config's seed for fresh runs.
pub fn cmd_train(
    dataset_dir: &Path,
    config: &Path,
    out: &Path,
    seed: Option<u64>,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let dataset = Dataset::open(dataset_dir)?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let trainer = match resume {
        Some(ckpt) => {
            let mut t = Trainer::resume(&dataset, ckpt)?;
            if t.cfg.config_id != cfg.config_id {
                return Err(Error::config(
                    "config_id",
                    format!("checkpoint was trained as ({}), config asks for ({})", t.cfg.config_id, cfg.config_id),
                ));
            }
            // later rounds may extend limits such as max_rounds
            cfg.seed = t.cfg.seed;
            t.cfg = cfg;
            t
        }
        None => Trainer::new(&dataset, cfg)?,
    };
    run_training(&dataset, trainer, out)
}

/// One view to render: object-to-camera pose and sun direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewSpec {
    pub q_obj2cam: [f64; 4],
    pub t_obj2cam: [f64; 3],
    pub sun_obj: [f64; 3],
}

/// Views file accepted by `render --views`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewsFile {
    pub intrinsics: Intrinsics,
    pub views: Vec<ViewSpec>,
}

pub enum RenderSource<'a> {
    /// Every frame of a dataset (or the listed indices), with ground truth.
    Dataset { dir: &'a Path, frames: Option<Vec<usize>> },
    Views(&'a Path),
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RenderOptions {
    /// Side-by-side with ground truth plus an error heat image.
    pub compare: bool,
    /// Dumps V, V′ and the shadow image for shadowed configs.
    pub shadow_debug: bool,
}

/// Black → red → yellow → white ramp of mean absolute channel error, with
/// full scale at an error of 0.5.
pub fn error_heat(pred: &Image, gt: &Image) -> Result<Image> {
    pred.ensure_same_shape(gt)?;
    let ch = pred.channels;
    let mut out = Image::new(pred.width, pred.height, 3);
    for p in 0..pred.pixels() {
        let e: f64 = (0..ch).map(|c| (pred.data[p * ch + c] - gt.data[p * ch + c]).abs()).sum::<f64>() / ch as f64;
        let t = (e / 0.5).clamp(0.0, 1.0) * 3.0;
        out.data[3 * p] = t.min(1.0);
        out.data[3 * p + 1] = (t - 1.0).clamp(0.0, 1.0);
        out.data[3 * p + 2] = (t - 2.0).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Ground truth on the left, render on the right.
pub fn side_by_side(left: &Image, right: &Image) -> Result<Image> {
    left.ensure_same_shape(right)?;
    let (w, h, ch) = (left.width, left.height, left.channels);
    let mut out = Image::new(2 * w, h, ch);
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                out.set(x, y, c, left.get(x, y, c));
                out.set(w + x, y, c, right.get(x, y, c));
            }
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct ShadowDump<'a> {
    frame: usize,
    /// Per Gaussian, indexed like the checkpoint.
    visibility: &'a [f64],
    /// Per rendered splat: Gaussian index and refined visibility.
    refined: Vec<(usize, f64)>,
}

/// Renders each requested view to `out/render_%06d.png`; returns the files written.
pub fn cmd_render(ckpt: &Path, source: RenderSource<'_>, out: &Path, opts: RenderOptions) -> Result<Vec<PathBuf>> {
    let (model, _, _) = checkpoint::read(ckpt)?;
    let (views, truth): (Vec<View>, Option<(Dataset, Vec<usize>)>) = match source {
        RenderSource::Dataset { dir, frames } => {
            let ds = Dataset::open(dir)?;
            let idx = frames.unwrap_or_else(|| (0..ds.len()).collect());
            if let Some(bad) = idx.iter().find(|i| **i >= ds.len()) {
                return Err(Error::config("frames", format!("frame {bad} out of range (dataset has {})", ds.len())));
            }
            (idx.iter().map(|&i| ds.view(i)).collect(), Some((ds, idx)))
        }
        RenderSource::Views(path) => {
            let file: ViewsFile = read_json(path)?;
            let k = file.intrinsics.pinhole()?;
            let views = file
                .views
                .iter()
                .map(|v| View {
                    pose: RigidTransform::new(Quat::from_array(v.q_obj2cam), Vec3::from(v.t_obj2cam)),
                    k,
                    sun: Vec3::from(v.sun_obj).normalize(),
                })
                .collect();
            (views, None)
        }
    };
    if opts.compare && truth.is_none() {
        return Err(Error::config("compare", "needs a dataset with ground truth"));
    }
    create_dir(out)?;
    let mut written = Vec::new();
    for (n, view) in views.iter().enumerate() {
        let r = model.render(view)?;
        let p = out.join(format!("render_{n:06}.png"));
        r.image.save_png(&p)?;
        written.push(p);
        if opts.compare {
            let (ds, idx) = truth.as_ref().unwrap();
            let gt = ds.load(idx[n])?.image;
            let p = out.join(format!("compare_{n:06}.png"));
            side_by_side(&gt, &r.image)?.save_png(&p)?;
            written.push(p);
            let p = out.join(format!("error_{n:06}.png"));
            error_heat(&r.image, &gt)?.save_png(&p)?;
            written.push(p);
        }
        if opts.shadow_debug {
            if let Some(s) = &r.shadow {
                let p = out.join(format!("shadow_{n:06}.png"));
                s.image.save_png(&p)?;
                written.push(p);
                let dump = ShadowDump {
                    frame: n,
                    visibility: &s.visibility,
                    refined: r.frame.splats.iter().zip(&s.refined).map(|(sp, v)| (sp.index, *v)).collect(),
                };
                let p = out.join(format!("shadow_{n:06}.json"));
                write_json(&p, &dump)?;
                written.push(p);
            }
        }
    }
    Ok(written)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalSplit {
    /// Frames in the keyframe window when the checkpoint was written.
    TrainWindow,
    /// Consumed training-sequence frames never admitted as keyframes.
    Holdout,
    /// The generator's random-pose split.
    RandomPose,
}

impl FromStr for EvalSplit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train-window" => Ok(EvalSplit::TrainWindow),
            "holdout" => Ok(EvalSplit::Holdout),
            "random-pose" => Ok(EvalSplit::RandomPose),
            other => Err(Error::config(
                "split",
                format!("unknown split `{other}` (expected train-window, holdout or random-pose)"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame_id: usize,
    pub psnr: f64,
    pub psnr_masked: f64,
    pub ssim: f64,
    pub ssim_masked: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: EvalSplit,
    pub config_id: ConfigId,
    pub gaussian_count: usize,
    /// Training throughput from the run's summary file, when present.
    pub train_steps_per_sec: Option<f64>,
    pub render_frames_per_sec: f64,
    pub frames: Vec<FrameMetrics>,
    /// Means of the per-frame rows.
    pub mean: FrameMetrics,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text table, one row per frame plus the mean.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "split {:?}  config ({})  gaussians {}",
            self.split, self.config_id, self.gaussian_count
        );
        let _ = writeln!(s, "{:>8} {:>10} {:>12} {:>8} {:>12}", "frame", "psnr", "psnr_masked", "ssim", "ssim_masked");
        let row = |s: &mut String, label: &str, m: &FrameMetrics| {
            let _ = writeln!(
                s,
                "{:>8} {:>10.3} {:>12.3} {:>8.4} {:>12.4}",
                label, m.psnr, m.psnr_masked, m.ssim, m.ssim_masked
            );
        };
        for m in &self.frames {
            row(&mut s, &m.frame_id.to_string(), m);
        }
        row(&mut s, "mean", &self.mean);
        if let Some(t) = self.train_steps_per_sec {
            let _ = writeln!(s, "train steps/s {t:.3}");
        }
        let _ = writeln!(s, "render frames/s {:.3}", self.render_frames_per_sec);
        s
    }
}

fn mean_of(rows: &[FrameMetrics]) -> FrameMetrics {
    let n = rows.len() as f64;
    let avg = |f: fn(&FrameMetrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
    FrameMetrics {
        frame_id: rows.len(),
        psnr: avg(|m| m.psnr),
        psnr_masked: avg(|m| m.psnr_masked),
        ssim: avg(|m| m.ssim),
        ssim_masked: avg(|m| m.ssim_masked),
    }
}

/// Indices into `dataset` making up `split`, given the checkpoint's run.
fn split_indices(dataset: &Dataset, cfg: &RunConfig, frames_consumed: usize, split: EvalSplit) -> Result<Vec<usize>> {
    let consumed = frames_consumed.min(dataset.len());
    let (window, admitted) = replay_keyframes(dataset, cfg.window, cfg.theta_view_deg, consumed)?;
    let frames = &dataset.manifest.frames;
    Ok(match split {
        EvalSplit::TrainWindow => {
            let ids = window.frame_ids();
            (0..consumed).filter(|&i| ids.contains(&frames[i].id)).collect()
        }
        EvalSplit::Holdout => (0..consumed).filter(|&i| !admitted.contains(&frames[i].id)).collect(),
        EvalSplit::RandomPose => unreachable!(),
    })
}

/// Scores one model against the frames at `indices`.
pub fn evaluate(model: &Model, dataset: &Dataset, indices: &[usize]) -> Result<(Vec<FrameMetrics>, f64)> {
    let start = Instant::now();
    let mut rows = Vec::with_capacity(indices.len());
    for &i in indices {
        let f = dataset.load(i)?;
        let r = model.render(&dataset.view(i))?;
        rows.push(FrameMetrics {
            frame_id: f.record.id,
            psnr: psnr(&r.image, &f.image)?,
            psnr_masked: psnr_masked(&r.image, &f.image, &f.mask)?,
            ssim: ssim(&r.image, &f.image)?,
            ssim_masked: ssim_masked(&r.image, &f.image, &f.mask)?,
        });
    }
    let fps = indices.len() as f64 / start.elapsed().as_secs_f64().max(1e-9);
    Ok((rows, fps))
}

pub fn cmd_eval(ckpt: &Path, dataset_dir: &Path, split: EvalSplit) -> Result<EvalReport> {
    let (model, meta, cfg) = checkpoint::read(ckpt)?;
    let train = Dataset::open(dataset_dir)?;
    let (ds, indices) = match split {
        EvalSplit::RandomPose => {
            let ev = train.eval_split()?;
            let n = ev.len();
            (ev, (0..n).collect())
        }
        _ => {
            let idx = split_indices(&train, &cfg, meta.frames_consumed as usize, split)?;
            (train, idx)
        }
    };
    if indices.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (frames, fps) = evaluate(&model, &ds, &indices)?;
    let summary = ckpt.parent().map(|d| d.join(SUMMARY_FILE)).filter(|p| p.exists());
    let train_steps_per_sec = match summary {
        Some(p) => Some(read_json::<TrainSummary>(&p)?.steps_per_sec),
        None => None,
    };
    Ok(EvalReport {
        split,
        config_id: model.config,
        gaussian_count: model.cloud.len(),
        train_steps_per_sec,
        render_frames_per_sec: fps,
        mean: mean_of(&frames),
        frames,
    })
}

/// Runs every finite-difference suite.
pub fn cmd_gradcheck(seed: u64) -> Vec<SuiteReport> {
    run_all(&GradcheckOptions {
        seed,
        ..Default::default()
    })
}

pub fn gradcheck_table(reports: &[SuiteReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<16} {:>8} {:>8} {:>12}  result", "suite", "checked", "skipped", "max_rel_err");
    for r in reports {
        let _ = writeln!(
            s,
            "{:<16} {:>8} {:>8} {:>12.3e}  {}",
            r.name,
            r.checked,
            r.skipped,
            r.max_rel_err,
            if r.passed { "pass" } else { "FAIL" }
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dataset(dir: &Path) {
        let cfg = DatagenConfig {
            width: 32,
            height: 32,
            fx: 40.0,
            fy: 40.0,
            eval_frames: 3,
            // slow enough that some frames are turned away by the window
            trajectory: crate::datagen::TrajectoryConfig {
                frames: 60,
                loops: 0.5,
                tumble_rate_deg: 0.2,
                ..Default::default()
            },
            ..Default::default()
        };
        let p = dir.join("gen.json");
        fs::write(&p, serde_json::to_string(&cfg).unwrap()).unwrap();
        cmd_generate(Some(&p), &dir.join("ds"), 3).unwrap();
    }

    fn tiny_run_config(dir: &Path, config: ConfigId) -> PathBuf {
        let cfg = RunConfig {
            config_id: config,
            window: 4,
            n_init: 150,
            max_rounds: Some(3),
            ..Default::default()
        };
        let p = dir.join(format!("run_{config}.json"));
        fs::write(&p, cfg.to_json()).unwrap();
        p
    }

    #[test]
    fn train_eval_render_roundtrip() {
        let tmp = tempfile::tempdir().unwrap();
        tiny_dataset(tmp.path());
        let ds = tmp.path().join("ds");
        let cfg = tiny_run_config(tmp.path(), ConfigId::A);
        let run = tmp.path().join("run");
        let out = cmd_train(&ds, &cfg, &run, None, None).unwrap();
        // one log record per step
        let log = fs::read_to_string(&out.log_path).unwrap();
        assert_eq!(log.lines().count() as u64, out.trainer.steps);
        assert_eq!(out.trainer.steps, 3 * 4);

        let ckpt = run.join("checkpoint.bin");
        for split in [EvalSplit::TrainWindow, EvalSplit::Holdout, EvalSplit::RandomPose] {
            let rep = cmd_eval(&ckpt, &ds, split).unwrap();
            let m = mean_of(&rep.frames);
            assert!((m.psnr - rep.mean.psnr).abs() < 1e-9);
            assert!((m.ssim_masked - rep.mean.ssim_masked).abs() < 1e-9);
            assert_eq!(rep.config_id, ConfigId::A);
            assert!(rep.table().lines().count() >= rep.frames.len() + 3);
        }
        let window = cmd_eval(&ckpt, &ds, EvalSplit::TrainWindow).unwrap();
        assert_eq!(window.frames.len(), 4);

        let files = cmd_render(
            &ckpt,
            RenderSource::Dataset {
                dir: &ds,
                frames: Some(vec![0, 5]),
            },
            &tmp.path().join("r"),
            RenderOptions {
                compare: true,
                shadow_debug: true,
            },
        )
        .unwrap();
        // config (a) has no shadow pass, so no debug dumps
        assert_eq!(files.len(), 6);
        assert!(files.iter().all(|f| f.exists()));
    }

    #[test]
    fn shadow_debug_dumps_for_shadowed_config() {
        let tmp = tempfile::tempdir().unwrap();
        tiny_dataset(tmp.path());
        let ds = tmp.path().join("ds");
        let mut cfg = RunConfig::load(&tiny_run_config(tmp.path(), ConfigId::C)).unwrap();
        cfg.max_rounds = Some(1);
        let p = tmp.path().join("c1.json");
        fs::write(&p, cfg.to_json()).unwrap();
        let run = tmp.path().join("run");
        cmd_train(&ds, &p, &run, None, None).unwrap();
        let out = tmp.path().join("r");
        let views = ViewsFile {
            intrinsics: Dataset::open(&ds).unwrap().manifest.intrinsics,
            views: vec![ViewSpec {
                q_obj2cam: [1.0, 0.0, 0.0, 0.0],
                t_obj2cam: [0.0, -1.0, 8.0],
                sun_obj: [0.0, 0.0, -1.0],
            }],
        };
        let vp = tmp.path().join("views.json");
        write_json(&vp, &views).unwrap();
        let opts = RenderOptions {
            compare: false,
            shadow_debug: true,
        };
        cmd_render(&run.join("checkpoint.bin"), RenderSource::Views(&vp), &out, opts).unwrap();
        for f in ["render_000000.png", "shadow_000000.png", "shadow_000000.json"] {
            assert!(out.join(f).exists(), "{f}");
        }
        let a = fs::read(out.join("render_000000.png")).unwrap();
        cmd_render(&run.join("checkpoint.bin"), RenderSource::Views(&vp), &out, opts).unwrap();
        assert_eq!(fs::read(out.join("render_000000.png")).unwrap(), a);
    }

    #[test]
    fn resume_continues_round_counter() {
        let tmp = tempfile::tempdir().unwrap();
        tiny_dataset(tmp.path());
        let ds = tmp.path().join("ds");
        let cfg_path = tiny_run_config(tmp.path(), ConfigId::B);
        let run = tmp.path().join("run");
        let first = cmd_train(&ds, &cfg_path, &run, None, None).unwrap();
        assert_eq!(first.trainer.round, 3);
        let mut more = RunConfig::load(&cfg_path).unwrap();
        more.max_rounds = Some(5);
        let p = tmp.path().join("more.json");
        fs::write(&p, more.to_json()).unwrap();
        let second = cmd_train(&ds, &p, &run, None, Some(&run.join("checkpoint.bin"))).unwrap();
        assert_eq!(second.trainer.round, 5);
        assert_eq!(second.trainer.steps, 5 * 4);
        let rounds: Vec<u64> = fs::read_to_string(&second.log_path)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str::<crate::train::LogRecord>(l).unwrap().round)
            .collect();
        assert_eq!(rounds.len(), 20);
        assert!(rounds.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(*rounds.last().unwrap(), 5);
    }

    #[test]
    fn config_errors_name_the_field() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("bad.json");
        fs::write(&p, r#"{"config_id": "e"}"#).unwrap();
        let err = RunConfig::load(&p).unwrap_err();
        assert!(err.is_usage());
        assert!(err.to_string().contains("config_id"), "{err}");
        fs::write(&p, r#"{"lr": {"means": -1}}"#).unwrap();
        assert!(RunConfig::load(&p).unwrap_err().to_string().contains("lr.means"));
        fs::write(&p, r#"{"window": 10, "windw": 3}"#).unwrap();
        assert!(RunConfig::load(&p).unwrap_err().is_usage());
        assert!(cmd_generate(Some(&tmp.path().join("missing.json")), tmp.path(), 0).unwrap_err().is_usage());
    }

    #[test]
    fn split_names() {
        assert_eq!("holdout".parse::<EvalSplit>().unwrap(), EvalSplit::Holdout);
        assert!("test".parse::<EvalSplit>().unwrap_err().is_usage());
    }
}
