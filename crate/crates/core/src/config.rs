//! Pipeline configuration, read from TOML.
//!
//! Every key is optional. Example:
//!
//! ```toml
//! seed = 7
//! depth_window = 5
//! gt_window = 5
//! horizon = 60.0          # row of the horizon, defaults to the principal point row
//!
//! [camera]                # defaults to f = max(width, height), centered
//! fu = 640.0
//! fv = 640.0
//! uo = 319.5
//! vo = 239.5
//!
//! [segmentation]
//! merge_threshold = 300.0
//! min_region_size = 64
//!
//! [flow]
//! pyramid_levels = 3
//! iterations = 100
//! smoothness = 15.0
//! warps = 2
//!
//! [depth_forest]          # also [occlusion_forest] and [gc_forest]
//! n_trees = 105
//! n_random_features_per_node = 11
//! max_depth = 35
//! min_samples_leaf = 5
//!
//! [occlusion]
//! gap_threshold = 2.0
//! pairwise_iterations = 3
//! temporal_window = 30
//!
//! [mrf]
//! lambda_conn = 1.0
//! lambda_cop = 0.5
//! symmetric_coplanarity = true
//! max_samples = 200
//! max_iter = 500
//! grad_tol = 1e-8
//! lbfgs_memory = 10
//! default_gate = 1.0
//!
//! [eval]
//! log_base = "10"         # or "e"
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::LogBase;
use crate::flow::FlowParams;
use crate::forest::ForestParams;
use crate::geometry::CameraIntrinsics;
use crate::mrf::MrfConfig;
use crate::segmentation::SegmentParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcclusionConfig {
    /// Median depth gap (meters) above which a training boundary is labeled
    /// occluding.
    pub gap_threshold: f64,
    pub pairwise_iterations: usize,
    pub temporal_window: usize,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        OcclusionConfig {
            gap_threshold: 2.0,
            pairwise_iterations: 3,
            temporal_window: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub log_base: LogBase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub camera: Option<CameraIntrinsics>,
    pub horizon: Option<f64>,
    /// Frames in the plane-smoothing window.
    pub depth_window: usize,
    /// Frames in the ground-truth averaging window.
    pub gt_window: usize,
    pub segmentation: SegmentParams,
    pub flow: FlowParams,
    pub depth_forest: ForestParams,
    pub occlusion_forest: ForestParams,
    pub gc_forest: ForestParams,
    pub occlusion: OcclusionConfig,
    pub mrf: MrfConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            camera: None,
            horizon: None,
            depth_window: 5,
            gt_window: 5,
            segmentation: SegmentParams::default(),
            flow: FlowParams::default(),
            depth_forest: ForestParams::default(),
            occlusion_forest: ForestParams::default(),
            gc_forest: ForestParams::default(),
            occlusion: OcclusionConfig::default(),
            mrf: MrfConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(k) = &self.camera {
            k.validate()?;
        }
        let m = &self.mrf;
        if m.lambda_conn < 0.0 || m.lambda_cop < 0.0 {
            return Err(Error::Config("MRF weights must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&m.default_gate) {
            return Err(Error::Config("mrf.default_gate must lie in [0,1]".into()));
        }
        if self.depth_window == 0 || self.gt_window == 0 || self.occlusion.temporal_window == 0 {
            return Err(Error::Config("windows must be at least one frame".into()));
        }
        Ok(())
    }

    /// Configured intrinsics, or the uncalibrated default for the frame size.
    pub fn intrinsics(&self, width: usize, height: usize) -> CameraIntrinsics {
        self.camera.unwrap_or_else(|| CameraIntrinsics::default_for(width, height))
    }

    pub fn horizon_row(&self, k: &CameraIntrinsics) -> f64 {
        self.horizon.unwrap_or(k.vo)
    }

    /// Apply a run seed to every forest.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.depth_forest.rng_seed = seed;
        self.occlusion_forest.rng_seed = seed.wrapping_add(1);
        self.gc_forest.rng_seed = seed.wrapping_add(2);
        self
    }
}
