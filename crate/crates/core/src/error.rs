use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point lies behind the camera (z = {z})")]
    BehindCamera { z: f64 },

    #[error("degenerate splat covariance (det = {det})")]
    Degenerate { det: f64 },

    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("image dimensions differ: {0}")]
    DimensionMismatch(String),

    #[error("loss mask selects no pixels")]
    EmptyMask,

    #[error("gaussian cloud is empty")]
    EmptyCloud,

    #[error("keyframe window too small to evict (max size {0} < 3)")]
    NothingEvictable(usize),

    #[error("keyframe window not full ({have} of {need})")]
    NotReady { have: usize, need: usize },

    #[error("dataset contains no frames")]
    EmptyDataset,

    #[error("mesh has zero surface area")]
    DegenerateMesh,

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("invalid config at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("network shape mismatch: {0}")]
    Shape(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error for {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::VersionMismatch { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Reads a user-supplied input file. A missing or unreadable file is a
/// usage error, not a runtime failure.
pub fn read_input(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::config(path.display().to_string(), format!("cannot read: {e}")))
}
