//! Ground-truth tooling, file formats and synthetic scenes.

pub mod formats;
pub mod lidar;
pub mod synth;

pub use lidar::{project_lidar, segment_ground_truth, Extrinsics, LidarHit, LidarScan};
pub use synth::{generate_scene, SceneOutput, SyntheticScene};
