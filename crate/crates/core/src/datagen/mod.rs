//! Synthetic ground truth: a procedural target, its camera path, and a ray
//! tracer with hard shadows.

pub mod dataset;
pub mod mesh;
pub mod raytrace;
pub mod trajectory;

pub use dataset::{generate_dataset, Dataset, DatagenConfig, FrameData, FrameRecord, Manifest};
pub use mesh::TargetMesh;
pub use trajectory::TrajectoryConfig;
