//! Binary model snapshot.
//!
//! ```text
//! "SGSC" | version u32 | n u64 | flags u32 | round u64 | steps u64
//! | frames_consumed u64 | scene_radius f64 | sun_distance f64
//! | per-Gaussian groups, f32 each: means, log_scales, rotations,
//!   opacity_logits, features, latents, [colors if flags & 1]
//! | network count u32, then per network: layer count u32, widths u32..,
//!   param count u64, params f32..
//! | shadow skip gain f32
//! | run config JSON: byte length u64, UTF-8 bytes
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use crate::appearance::{AppearanceMlp, ShadowMlp};
use crate::cloud::{GaussianCloud, FEATURE_DIM, LATENT_DIM};
use crate::error::{Error, Result};
use crate::mlp::Mlp;
use crate::render::Model;
use crate::train::RunConfig;

pub const MAGIC: &[u8; 4] = b"SGSC";
pub const VERSION: u32 = 1;
const FLAG_COLORS: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub round: u64,
    pub steps: u64,
    pub frames_consumed: u64,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32s(&mut self, v: impl IntoIterator<Item = f32>) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn net(&mut self, net: &Mlp<f32>) {
        let w = net.widths();
        self.u32(w.len() as u32);
        for x in w {
            self.u32(x as u32);
        }
        self.u64(net.params.len() as u64);
        self.f32s(net.params.iter().copied());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self, count: u64, elem: usize) -> Result<usize> {
        let n = usize::try_from(count).map_err(|_| Error::Checkpoint("length overflow".into()))?;
        if n.checked_mul(elem).is_none_or(|b| b > self.buf.len() - self.pos) {
            return Err(Error::Checkpoint(format!("length {n} exceeds file size")));
        }
        Ok(n)
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("length overflow".into()))?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn group(&mut self, n: usize, stride: usize) -> Result<Vec<f64>> {
        Ok(self.f32s(n * stride)?.into_iter().map(f64::from).collect())
    }
    fn net(&mut self) -> Result<Mlp<f32>> {
        let layers = self.u32()? as usize;
        if layers < 2 || layers > 64 {
            return Err(Error::Checkpoint(format!("implausible layer count {layers}")));
        }
        let widths = (0..layers).map(|_| self.u32().map(|w| w as usize)).collect::<Result<Vec<_>>>()?;
        let count = self.u64()?;
        let count = self.len(count, 4)?;
        Mlp::from_params(&widths, self.f32s(count)?)
    }
}

pub fn encode(model: &Model, meta: &CheckpointMeta, cfg: &RunConfig) -> Vec<u8> {
    let c = &model.cloud;
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u64(c.len() as u64);
    w.u32(if c.colors.is_some() { FLAG_COLORS } else { 0 });
    w.u64(meta.round);
    w.u64(meta.steps);
    w.u64(meta.frames_consumed);
    w.f64(model.scene_radius);
    w.f64(model.sun_distance);
    for g in [&c.means, &c.log_scales, &c.rotations, &c.opacity_logits, &c.features, &c.latents] {
        w.f32s(g.iter().map(|v| *v as f32));
    }
    if let Some(col) = &c.colors {
        w.f32s(col.iter().map(|v| *v as f32));
    }
    w.u32(2);
    w.net(&model.phi.net);
    w.net(&model.psi.net);
    w.f32s([model.psi.skip_gain]);
    let json = serde_json::to_vec(cfg).expect("config serializes");
    w.u64(json.len() as u64);
    w.0.extend_from_slice(&json);
    w.0
}

pub fn decode(buf: &[u8]) -> Result<(Model, CheckpointMeta, RunConfig)> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let n = r.u64()?;
    let n = r.len(n, 4 * (3 + 3 + 4 + 1 + FEATURE_DIM + LATENT_DIM))?;
    let flags = r.u32()?;
    let meta = CheckpointMeta {
        round: r.u64()?,
        steps: r.u64()?,
        frames_consumed: r.u64()?,
    };
    let scene_radius = r.f64()?;
    let sun_distance = r.f64()?;
    let mut cloud = GaussianCloud {
        means: r.group(n, 3)?,
        log_scales: r.group(n, 3)?,
        rotations: r.group(n, 4)?,
        opacity_logits: r.group(n, 1)?,
        features: r.group(n, FEATURE_DIM)?,
        latents: r.group(n, LATENT_DIM)?,
        colors: None,
    };
    if flags & FLAG_COLORS != 0 {
        cloud.colors = Some(r.group(n, 3)?);
    }
    if r.u32()? != 2 {
        return Err(Error::Checkpoint("expected two networks".into()));
    }
    let phi = AppearanceMlp::from_net(r.net()?)?;
    let psi_net = r.net()?;
    let gain = r.f32s(1)?[0];
    let psi = ShadowMlp::from_parts(psi_net, gain)?;
    let json_len = r.u64()?;
    let json_len = r.len(json_len, 1)?;
    let text = std::str::from_utf8(r.take(json_len)?).map_err(|_| Error::Checkpoint("config is not UTF-8".into()))?;
    let cfg = RunConfig::from_json(text)?;
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    if cfg.config_id.uses_appearance() == cloud.colors.is_some() {
        return Err(Error::Checkpoint("color group does not match the configuration".into()));
    }
    Ok((
        Model {
            config: cfg.config_id,
            cloud,
            phi,
            psi,
            scene_radius,
            sun_distance,
        },
        meta,
        cfg,
    ))
}

pub fn write(path: &Path, model: &Model, meta: &CheckpointMeta, cfg: &RunConfig) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    fs::write(path, encode(model, meta, cfg)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read(path: &Path) -> Result<(Model, CheckpointMeta, RunConfig)> {
    let buf = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode(&buf)
}
