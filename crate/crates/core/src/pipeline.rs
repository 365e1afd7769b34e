//! End-to-end plumbing: per-video preparation, forest training, unary
//! prediction, occlusion gating and MRF inference, plus the on-disk layout
//! of a scene directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::config::PipelineConfig;
use crate::dataset::formats;
use crate::dataset::SceneOutput;
use crate::error::{Error, Result};
use crate::features::{self, extract_features, Ablation, GeometricContextMap, SliceFeatures};
use crate::flow::{backward_flows, FlowField};
use crate::forest::{self, FeatureMatrix, ForestModel, ForestParams, Targets};
use crate::geometry::{CameraIntrinsics, DepthMap, MAX_DEPTH};
use crate::imaging::VideoVolume;
use crate::mrf::{self, MrfSolution, PlaneTrack};
use crate::occlusion::{self, EdgeletGraph, EdgeletRecord};
use crate::segmentation::{region_index, RegionTable, SegmentationLabelMap};

/// Everything needed to run and score the pipeline on one video.
#[derive(Debug, Clone)]
pub struct VideoSample {
    pub name: String,
    pub video: VideoVolume,
    pub labels: SegmentationLabelMap,
    /// `backward[t]` maps frame `t + 1` to frame `t`.
    pub backward: Vec<FlowField>,
    pub gc: Vec<GeometricContextMap>,
    pub intrinsics: CameraIntrinsics,
    /// Ground-truth depth per frame; may be empty at inference time.
    pub gt: Vec<DepthMap>,
}

impl VideoSample {
    /// Sample from a generated scene, with estimated flow. `gc` replaces the
    /// scene's one-hot class maps when given.
    pub fn from_synthetic(
        name: impl Into<String>,
        scene: &SceneOutput,
        k: CameraIntrinsics,
        gc: Option<Vec<GeometricContextMap>>,
        cfg: &PipelineConfig,
    ) -> Result<Self> {
        Ok(VideoSample {
            name: name.into(),
            video: scene.video.clone(),
            labels: scene.labels.clone(),
            backward: backward_flows(scene.video.frames(), &cfg.flow)?,
            gc: gc.unwrap_or_else(|| scene.gc_maps.clone()),
            intrinsics: k,
            gt: scene.depths.clone(),
        })
    }
}

/// A sample with its region index, slice features and edgelet features.
#[derive(Debug, Clone)]
pub struct PreparedVideo<'a> {
    pub sample: &'a VideoSample,
    pub table: RegionTable,
    pub slices: Vec<SliceFeatures>,
    pub graph: EdgeletGraph,
}

pub fn prepare<'a>(sample: &'a VideoSample, cfg: &PipelineConfig) -> Result<PreparedVideo<'a>> {
    let table = region_index(&sample.labels);
    let horizon = cfg.horizon_row(&sample.intrinsics);
    let slices = extract_features(&sample.video, &sample.labels, &table, &sample.backward, &sample.gc, horizon)?;
    let graph = edgelet_graph(&sample.labels, &slices, &sample.video, &sample.backward)?;
    Ok(PreparedVideo {
        sample,
        table,
        slices,
        graph,
    })
}

pub fn edgelet_graph(
    labels: &SegmentationLabelMap,
    slices: &[SliceFeatures],
    video: &VideoVolume,
    backward: &[FlowField],
) -> Result<EdgeletGraph> {
    let mut graph = EdgeletGraph::from_labels(labels);
    occlusion::compute_edgelet_features(&mut graph, labels, slices, video.frames(), backward)?;
    Ok(graph)
}

// ---------------------------------------------------------------- depth forest

/// Full feature rows and log10 targets for slices whose pixels have valid
/// ground truth. The target is the log of the mean valid depth in the slice.
pub fn depth_training_rows(
    slices: &[SliceFeatures],
    table: &RegionTable,
    gt: &[DepthMap],
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for s in slices {
        let g = gt
            .get(s.frame)
            .ok_or_else(|| Error::InconsistentInput(format!("no ground truth for frame {}", s.frame)))?;
        let px = table
            .slice(s.region, s.frame)
            .ok_or_else(|| Error::InconsistentInput(format!("region {} absent from frame {}", s.region, s.frame)))?;
        let (sum, n) = px
            .iter()
            .filter(|&&p| g.valid[p])
            .fold((0.0, 0usize), |(s, n), &p| (s + g.values[p], n + 1));
        if n > 0 {
            rows.push(s.features.as_slice().to_vec());
            targets.push((sum / n as f64).log10());
        }
    }
    Ok((rows, targets))
}

/// Regression forest over the ablation's columns of full feature rows.
pub fn train_depth_forest(rows: &[Vec<f64>], targets: &[f64], ablation: Ablation, params: &ForestParams) -> Result<ForestModel> {
    let cols = ablation.columns();
    let x = FeatureMatrix::from_rows(rows)?.select_columns(&cols);
    let names = features::feature_names();
    forest::train(&x, &Targets::Regression(targets.to_vec()), params)?
        .with_feature_names(cols.iter().map(|&c| names[c].clone()).collect())
}

pub fn train_depth_model(videos: &[&PreparedVideo<'_>], ablation: Ablation, params: &ForestParams) -> Result<ForestModel> {
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for v in videos {
        let (r, t) = depth_training_rows(&v.slices, &v.table, &v.sample.gt)?;
        rows.extend(r);
        targets.extend(t);
    }
    train_depth_forest(&rows, &targets, ablation, params)
}

/// Columns of the full feature layout a depth model was trained on.
pub fn model_columns(model: &ForestModel) -> Result<Vec<usize>> {
    let names = features::feature_names();
    model
        .feature_names
        .iter()
        .map(|n| {
            names.iter().position(|m| m == n).ok_or_else(|| {
                Error::Untrained(format!("depth model uses unknown feature {n:?}; retrain with train-depth"))
            })
        })
        .collect()
}

/// Per-pixel unary depth: each slice's prediction, broadcast to its pixels.
pub fn predict_unary(
    model: &ForestModel,
    slices: &[SliceFeatures],
    labels: &SegmentationLabelMap,
    table: &RegionTable,
) -> Result<Vec<DepthMap>> {
    let cols = model_columns(model)?;
    let (w, h) = (labels.width(), labels.height());
    let mut maps = vec![DepthMap::new_invalid(w, h); labels.frame_count()];
    for s in slices {
        let f = s.features.as_slice();
        let x: Vec<f64> = cols.iter().map(|&c| f[c]).collect();
        let d = 10f64.powf(model.predict_value(&x)?).clamp(1e-3, MAX_DEPTH);
        let px = table
            .slice(s.region, s.frame)
            .ok_or_else(|| Error::InconsistentInput(format!("region {} absent from frame {}", s.region, s.frame)))?;
        for &p in px {
            maps[s.frame].set(p, d);
        }
    }
    Ok(maps)
}

// ---------------------------------------------------------------- occlusion

pub fn train_occlusion_model(videos: &[&PreparedVideo<'_>], cfg: &PipelineConfig) -> Result<ForestModel> {
    let mut rows = Vec::new();
    let mut classes = Vec::new();
    for v in videos {
        let (r, c) = occlusion::training_set(&v.graph, &v.sample.labels, &v.sample.gt, cfg.occlusion.gap_threshold)?;
        rows.extend(r);
        classes.extend(c);
    }
    occlusion::train_occlusion(&rows, &classes, &cfg.occlusion_forest)
}

/// Classify, then smooth spatially and temporally.
pub fn occlusion_gates(graph: &mut EdgeletGraph, model: &ForestModel, cfg: &PipelineConfig) -> Result<BTreeMap<(usize, u32, u32), f64>> {
    occlusion::classify_edgelets(graph, model)?;
    occlusion::smooth_pairwise(graph, cfg.occlusion.pairwise_iterations);
    occlusion::temporal_smooth(graph, cfg.occlusion.temporal_window);
    Ok(graph.gates())
}

/// Gates from ground-truth depth: 0 across boundaries whose median depth gap
/// exceeds `threshold`, 1 otherwise. Boundaries without valid depth on both
/// sides are left out.
pub fn oracle_gates(labels: &SegmentationLabelMap, gt: &[DepthMap], threshold: f64) -> Result<BTreeMap<(usize, u32, u32), f64>> {
    if gt.len() != labels.frame_count() {
        return Err(Error::dims(format!("{} depth maps", labels.frame_count()), format!("{} depth maps", gt.len())));
    }
    let graph = EdgeletGraph::from_labels(labels);
    Ok(graph
        .edgelets
        .iter()
        .filter_map(|e| {
            occlusion::depth_gap_label(e, labels, &gt[e.frame], threshold)
                .map(|occluding| ((e.frame, e.i, e.j), if occluding { 0.0 } else { 1.0 }))
        })
        .collect())
}

pub fn gates_from_records(records: &[EdgeletRecord]) -> BTreeMap<(usize, u32, u32), f64> {
    records.iter().map(|r| ((r.frame, r.pair.0, r.pair.1), r.p_non_occl)).collect()
}

// ---------------------------------------------------------------- inference

#[derive(Debug, Clone)]
pub struct InferenceOutput {
    /// Temporally smoothed planes.
    pub planes: PlaneTrack,
    pub depths: Vec<DepthMap>,
    pub solutions: Vec<MrfSolution>,
}

/// Per-frame MRF solve followed by temporal plane smoothing.
pub fn infer(
    labels: &SegmentationLabelMap,
    k: &CameraIntrinsics,
    unary: &[DepthMap],
    gates: &BTreeMap<(usize, u32, u32), f64>,
    cfg: &PipelineConfig,
) -> Result<InferenceOutput> {
    let (raw, solutions) = mrf::solve_video(labels, k, unary, gates, &cfg.mrf)?;
    let (planes, depths) = mrf::temporal_depth_smooth(&raw, labels, k, cfg.depth_window)?;
    Ok(InferenceOutput {
        planes,
        depths,
        solutions,
    })
}

/// Predict unaries, gate with the occlusion model (if any) and solve.
pub fn run_inference(
    video: &PreparedVideo<'_>,
    depth_model: &ForestModel,
    occlusion_model: Option<&ForestModel>,
    cfg: &PipelineConfig,
) -> Result<InferenceOutput> {
    let s = video.sample;
    let unary = predict_unary(depth_model, &video.slices, &s.labels, &video.table)?;
    let gates = match occlusion_model {
        Some(m) => occlusion_gates(&mut video.graph.clone(), m, cfg)?,
        None => BTreeMap::new(),
    };
    infer(&s.labels, &s.intrinsics, &unary, &gates, cfg)
}

// ---------------------------------------------------------------- scene directories

/// File layout of one scene:
///
/// ```text
/// frames/frame_NNNNNN.png   input video
/// camera.toml               intrinsics (fu, fv, uo, vo)
/// gt/frame_NNNNNN.pfm       ground-truth depth
/// gc.gcmap                  geometric-context confidences
/// gt_labels.stseg           generator's region map (synthetic scenes)
/// scene.json                generator description (synthetic scenes)
/// labels.stseg              segmentation
/// flow/flow_NNNNNN.flo      backward flow
/// features.csv              region-slice features (+ .bin with .json sidecar)
/// edgelets.jsonl            occlusion probabilities
/// planes.csv                inferred planes
/// depth/frame_NNNNNN.pfm    inferred depth
/// preview/                  color-mapped depth
/// ```
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneDir(pub PathBuf);

impl SceneDir {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        SceneDir(path.into())
    }

    pub fn path(&self) -> &Path {
        &self.0
    }

    pub fn frames(&self) -> PathBuf {
        self.0.join("frames")
    }
    pub fn camera(&self) -> PathBuf {
        self.0.join("camera.toml")
    }
    pub fn gt(&self) -> PathBuf {
        self.0.join("gt")
    }
    pub fn gc(&self) -> PathBuf {
        self.0.join("gc.gcmap")
    }
    pub fn gt_labels(&self) -> PathBuf {
        self.0.join("gt_labels.stseg")
    }
    pub fn scene_json(&self) -> PathBuf {
        self.0.join("scene.json")
    }
    pub fn labels(&self) -> PathBuf {
        self.0.join("labels.stseg")
    }
    pub fn flow(&self) -> PathBuf {
        self.0.join("flow")
    }
    pub fn features(&self) -> PathBuf {
        self.0.join("features.csv")
    }
    pub fn features_bin(&self) -> PathBuf {
        self.0.join("features.bin")
    }
    pub fn edgelets(&self) -> PathBuf {
        self.0.join("edgelets.jsonl")
    }
    pub fn planes(&self) -> PathBuf {
        self.0.join("planes.csv")
    }
    pub fn depth(&self) -> PathBuf {
        self.0.join("depth")
    }
    pub fn preview(&self) -> PathBuf {
        self.0.join("preview")
    }

    pub fn read_video(&self) -> Result<VideoVolume> {
        formats::read_frames(&self.frames())
    }

    /// Intrinsics from `camera.toml`, else the configured or default ones.
    pub fn intrinsics(&self, cfg: &PipelineConfig, width: usize, height: usize) -> Result<CameraIntrinsics> {
        let p = self.camera();
        if p.exists() {
            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            let k: CameraIntrinsics = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            k.validate()?;
            Ok(k)
        } else {
            Ok(cfg.intrinsics(width, height))
        }
    }

    pub fn write_intrinsics(&self, k: &CameraIntrinsics) -> Result<()> {
        let text = toml::to_string(k).map_err(|e| Error::Config(e.to_string()))?;
        formats::atomic_write(&self.camera(), text.as_bytes())
    }

    pub fn read_labels(&self) -> Result<SegmentationLabelMap> {
        let p = self.labels();
        if !p.exists() {
            return Err(Error::InconsistentInput(format!(
                "{} not found; run `segment` first",
                p.display()
            )));
        }
        formats::read_labels(&p)
    }

    pub fn read_flow(&self, frames: usize) -> Result<Vec<FlowField>> {
        if frames < 2 {
            return Ok(Vec::new());
        }
        let dir = self.flow();
        if !dir.exists() {
            return Err(Error::InconsistentInput(format!("{} not found; run `flow` first", dir.display())));
        }
        formats::read_flow_sequence(&dir, frames - 1)
    }

    /// Confidence maps from `gc.gcmap`, or a uniform prior when absent.
    pub fn read_gc(&self, video: &VideoVolume) -> Result<Vec<GeometricContextMap>> {
        let p = self.gc();
        if p.exists() {
            formats::read_gc_maps(&p)
        } else {
            log::warn!("{} not found; using a uniform class prior", p.display());
            let u = 1.0 / features::GC_CLASSES as f32;
            Ok(vec![GeometricContextMap::uniform(video.width(), video.height(), [u; features::GC_CLASSES]); video.len()])
        }
    }

    pub fn read_gt(&self) -> Result<Vec<DepthMap>> {
        let dir = self.gt();
        if !dir.exists() {
            return Err(Error::InconsistentInput(format!(
                "{} not found; ground truth is needed (see project-lidar)",
                dir.display()
            )));
        }
        formats::read_depth_sequence(&dir)
    }

    pub fn read_slices(&self) -> Result<Vec<SliceFeatures>> {
        let p = self.features();
        if !p.exists() {
            return Err(Error::InconsistentInput(format!("{} not found; run `features` first", p.display())));
        }
        features::from_table(&formats::read_feature_csv(&p)?)
    }

    /// Load a scene for training or evaluation.
    pub fn load_sample(&self, cfg: &PipelineConfig, with_gt: bool) -> Result<VideoSample> {
        let video = self.read_video()?;
        let labels = self.read_labels()?;
        let backward = self.read_flow(video.len())?;
        let gc = self.read_gc(&video)?;
        let intrinsics = self.intrinsics(cfg, video.width(), video.height())?;
        let gt = if with_gt { self.read_gt()? } else { Vec::new() };
        if with_gt && gt.len() != video.len() {
            return Err(Error::dims(format!("{} ground-truth frames", video.len()), format!("{} ground-truth frames", gt.len())));
        }
        Ok(VideoSample {
            name: self.0.display().to_string(),
            video,
            labels,
            backward,
            gc,
            intrinsics,
            gt,
        })
    }
}
