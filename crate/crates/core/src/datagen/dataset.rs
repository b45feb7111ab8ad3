//! On-disk dataset layout:
//!
//! ```text
//! <dir>/manifest.json   intrinsics + frame records
//! <dir>/mesh.json       target triangles (used to seed the Gaussians)
//! <dir>/images/%06d.png
//! <dir>/masks/%06d.png
//! <dir>/eval/...        random-pose split, same layout
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mesh::TargetMesh;
use super::raytrace::raytrace_frame;
use super::trajectory::{random_eval_pose, FramePose, TrajectoryConfig};
use crate::error::{Error, Result};
use crate::geom::{Pinhole, Quat, RigidTransform, Vec3};
use crate::image::{load_mask, save_mask, Image};
use crate::render::View;

pub const EVAL_DIR: &str = "eval";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatagenConfig {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub eval_frames: usize,
    /// Camera distance range (m) for the random-pose split.
    pub eval_radius: [f64; 2],
    pub trajectory: TrajectoryConfig,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        DatagenConfig {
            width: 128,
            height: 128,
            fx: 160.0,
            fy: 160.0,
            eval_frames: 20,
            eval_radius: [4.0, 12.0],
            trajectory: TrajectoryConfig::default(),
        }
    }
}

impl DatagenConfig {
    pub fn pinhole(&self) -> Result<Pinhole> {
        Pinhole::new(
            self.fx,
            self.fy,
            self.width as f64 / 2.0,
            self.height as f64 / 2.0,
            self.width,
            self.height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.pinhole().map_err(|e| Error::config("width/height/fx/fy", e.to_string()))?;
        let t = &self.trajectory;
        if t.frame_interval <= 0.0 {
            return Err(Error::config("trajectory.frame_interval", "must be positive"));
        }
        if Vec3::from(t.sun_inertial).norm() == 0.0 {
            return Err(Error::config("trajectory.sun_inertial", "must be nonzero"));
        }
        if !(0.0 < self.eval_radius[0] && self.eval_radius[0] < self.eval_radius[1]) {
            return Err(Error::config("eval_radius", "expected 0 < min < max"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl From<Pinhole> for Intrinsics {
    fn from(k: Pinhole) -> Self {
        Intrinsics {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
        }
    }
}

impl Intrinsics {
    pub fn pinhole(&self) -> Result<Pinhole> {
        Pinhole::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub id: usize,
    pub image: String,
    pub mask: String,
    pub q_obj2cam: [f64; 4],
    pub t_obj2cam: [f64; 3],
    pub sun_obj: [f64; 3],
}

impl FrameRecord {
    pub fn pose(&self) -> RigidTransform {
        RigidTransform::new(Quat::from_array(self.q_obj2cam), Vec3::from(self.t_obj2cam))
    }

    pub fn sun(&self) -> Vec3 {
        Vec3::from(self.sun_obj).normalize()
    }

    /// Unit vector from the object origin toward the camera center.
    pub fn view_vector(&self) -> Vec3 {
        self.pose().camera_center().normalize()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub intrinsics: Intrinsics,
    pub frames: Vec<FrameRecord>,
}

/// A loaded frame: ground-truth color and foreground mask.
#[derive(Clone, Debug)]
pub struct FrameData {
    pub record: FrameRecord,
    pub image: Image,
    pub mask: Vec<bool>,
}

/// Manifest plus lazy access to images.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub k: Pinhole,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Dataset> {
        let path = root.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let manifest: Manifest = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::config(format!("{}: {}", path.display(), e.path()), e.inner().to_string()))?;
        let k = manifest.intrinsics.pinhole()?;
        Ok(Dataset {
            root: root.to_owned(),
            manifest,
            k,
        })
    }

    pub fn len(&self) -> usize {
        self.manifest.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.frames.is_empty()
    }

    pub fn view(&self, index: usize) -> View {
        let r = &self.manifest.frames[index];
        View {
            pose: r.pose(),
            k: self.k,
            sun: r.sun(),
        }
    }

    pub fn load(&self, index: usize) -> Result<FrameData> {
        let record = self.manifest.frames[index].clone();
        let image = Image::load_rgb(&self.root.join(&record.image))?;
        let mask = load_mask(&self.root.join(&record.mask))?;
        if image.width != self.k.width as usize || image.height != self.k.height as usize || mask.len() != image.pixels() {
            return Err(Error::DimensionMismatch(format!("frame {} does not match the intrinsics", record.id)));
        }
        Ok(FrameData { record, image, mask })
    }

    pub fn mesh(&self) -> Result<TargetMesh> {
        let path = self.root.join("mesh.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            context: path.display().to_string(),
            source,
        })
    }

    pub fn eval_split(&self) -> Result<Dataset> {
        Dataset::open(&self.root.join(EVAL_DIR))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        context: path.display().to_string(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn write_split(mesh: &TargetMesh, k: &Pinhole, poses: &[FramePose], dir: &Path) -> Result<()> {
    for sub in ["images", "masks"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(format!("creating {}", dir.join(sub).display()), e))?;
    }
    let mut frames = Vec::with_capacity(poses.len());
    for (id, fp) in poses.iter().enumerate() {
        let (img, mask) = raytrace_frame(mesh, &fp.pose, k, &fp.sun);
        let image = format!("images/{id:06}.png");
        let mask_name = format!("masks/{id:06}.png");
        img.save_png(&dir.join(&image))?;
        save_mask(&mask, k.width as usize, k.height as usize, &dir.join(&mask_name))?;
        let t = fp.pose.translation;
        frames.push(FrameRecord {
            id,
            image,
            mask: mask_name,
            q_obj2cam: fp.pose.rotation.to_array(),
            t_obj2cam: [t.x, t.y, t.z],
            sun_obj: [fp.sun.x, fp.sun.y, fp.sun.z],
        });
    }
    write_json(
        &dir.join("manifest.json"),
        &Manifest {
            intrinsics: (*k).into(),
            frames,
        },
    )
}

/// Renders the training sequence and the random-pose split into `out`.
pub fn generate_dataset(mesh: &TargetMesh, cfg: &DatagenConfig, out: &Path, seed: u64) -> Result<()> {
    cfg.validate()?;
    let k = cfg.pinhole()?;
    fs::create_dir_all(out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
    let train: Vec<FramePose> = (0..cfg.trajectory.frames).map(|i| cfg.trajectory.frame(i)).collect();
    write_split(mesh, &k, &train, out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eval: Vec<FramePose> = (0..cfg.eval_frames)
        .map(|_| random_eval_pose(&mut rng, (cfg.eval_radius[0], cfg.eval_radius[1])))
        .collect();
    write_split(mesh, &k, &eval, &out.join(EVAL_DIR))?;
    write_json(&out.join("mesh.json"), mesh)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_dataset_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = DatagenConfig {
            width: 32,
            height: 32,
            fx: 40.0,
            fy: 40.0,
            eval_frames: 3,
            ..Default::default()
        };
        cfg.trajectory.frames = 10;
        let mesh = TargetMesh::canonical();
        generate_dataset(&mesh, &cfg, dir.path(), 7).unwrap();
        let ds = Dataset::open(dir.path()).unwrap();
        assert_eq!(ds.len(), 10);
        for i in 0..10 {
            let f = ds.load(i).unwrap();
            assert_eq!(f.record.id, i);
            // every lit pixel is inside the mask
            for p in 0..f.mask.len() {
                if (0..3).any(|c| f.image.data[3 * p + c] > 0.0) {
                    assert!(f.mask[p]);
                }
            }
        }
        assert_eq!(ds.eval_split().unwrap().len(), 3);
        assert_eq!(ds.mesh().unwrap(), mesh);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = DatagenConfig {
            fx: -1.0,
            ..Default::default()
        };
        assert!(cfg.validate().unwrap_err().is_usage());
    }
}
