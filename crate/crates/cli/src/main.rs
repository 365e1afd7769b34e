use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use planedepth::config::PipelineConfig;
use planedepth::dataset::formats::{self, PlaneRecord};
use planedepth::dataset::lidar::{project_lidar, segment_ground_truth, Extrinsics, LidarScan};
use planedepth::dataset::synth::{noisy_gc_maps, random_layered_scene, random_street_scene};
use planedepth::dataset::{generate_scene, SyntheticScene};
use planedepth::eval::{crossval, evaluate, LogBase};
use planedepth::features::{
    self, Ablation, BaselineGc, GeometricContextProvider, SliceFeatures, APPEARANCE_DIM, GC_CLASSES,
};
use planedepth::flow::backward_flows;
use planedepth::forest::{read_model, write_model, FeatureMatrix, ForestModel};
use planedepth::mrf::StopReason;
use planedepth::occlusion::{self, EdgeletGraph};
use planedepth::pipeline::{self, SceneDir, VideoSample};
use planedepth::segmentation::{region_index, segment_video, SegmentationLabelMap};

#[derive(Parser)]
#[command(name = "planedepth", version, about = "Depth from monocular video with region forests and a planar MRF")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    /// TOML pipeline configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random forest and generator.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Temporal window (frames) for plane smoothing and ground-truth averaging.
    #[arg(long, global = true)]
    window: Option<usize>,
    #[arg(long, global = true)]
    lambda_conn: Option<f64>,
    #[arg(long, global = true)]
    lambda_cop: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SceneKind {
    Street,
    Layered,
}

#[derive(Clone, Copy, ValueEnum)]
enum DepthSource {
    Depth,
    Gt,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic scene directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "street")]
        kind: SceneKind,
        #[arg(long, default_value_t = 8)]
        frames: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 48)]
        height: usize,
        /// Region count for layered scenes.
        #[arg(long, default_value_t = 5)]
        regions: usize,
        /// Confidence kept by the true class in gc.gcmap (1 = one-hot).
        #[arg(long, default_value_t = 0.7)]
        gc_keep: f32,
    },
    /// Spatio-temporal segmentation into labels.stseg.
    Segment { scene: PathBuf },
    /// Backward optical flow into flow/.
    Flow { scene: PathBuf },
    /// Region-slice features into features.csv and features.bin.
    Features {
        scene: PathBuf,
        /// Compute gc.gcmap with this geometric-context model first.
        #[arg(long)]
        gc_model: Option<PathBuf>,
    },
    /// Train the region depth forest.
    TrainDepth {
        #[arg(required = true)]
        scenes: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "ALL")]
        ablation: Ablation,
    },
    /// Train the occlusion-boundary forest.
    TrainOccl {
        #[arg(required = true)]
        scenes: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the baseline geometric-context classifier from gc.gcmap labels.
    TrainGc {
        #[arg(required = true)]
        scenes: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Occlusion probabilities into edgelets.jsonl.
    Occl {
        scene: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Planes and depth into planes.csv and depth/.
    Infer {
        scene: PathBuf,
        /// Depth forest from train-depth.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Use gt/ as unary depth; gates come from edgelets.jsonl or, when
        /// absent, from ground-truth depth gaps.
        #[arg(long)]
        oracle_unaries: bool,
    },
    /// Compare predicted depth with ground truth.
    Eval {
        /// Scene directory: compares depth/ with gt/ and uses gc.gcmap classes.
        scene: Option<PathBuf>,
        #[arg(long, conflicts_with = "scene", requires = "gt")]
        pred: Option<PathBuf>,
        #[arg(long, conflicts_with = "scene", requires = "pred")]
        gt: Option<PathBuf>,
        #[arg(long)]
        log_base: Option<LogBase>,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// K-fold cross-validation over whole videos.
    Crossval {
        #[arg(required = true)]
        scenes: Vec<PathBuf>,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value = "ALL")]
        ablation: Ablation,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Ground truth in gt/ from per-frame point clouds.
    ProjectLidar {
        scene: PathBuf,
        /// Directory of frame_NNNNNN.xyz (text) or .bin (packed f32) scans.
        #[arg(long)]
        points: PathBuf,
        /// TOML with `rotation` (3x3, row-major) and `translation`.
        #[arg(long)]
        extrinsics: Option<PathBuf>,
    },
    /// Color-mapped depth PNGs (0 m blue to 80 m red) into preview/.
    RenderPreview {
        scene: PathBuf,
        #[arg(long, value_enum, default_value = "depth")]
        source: DepthSource,
    },
}

fn load_config(g: &Global) -> Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(w) = g.window {
        cfg.depth_window = w;
        cfg.gt_window = w;
    }
    if let Some(l) = g.lambda_conn {
        cfg.mrf.lambda_conn = l;
    }
    if let Some(l) = g.lambda_cop {
        cfg.mrf.lambda_cop = l;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_model(path: &Path, what: &str, train_cmd: &str) -> Result<ForestModel> {
    if !path.exists() {
        bail!("{what} model {} not found; train one with `planedepth {train_cmd}`", path.display());
    }
    read_model(path).with_context(|| format!("reading {what} model {}", path.display()))
}

fn labels_for(dir: &SceneDir) -> Result<SegmentationLabelMap> {
    if dir.labels().exists() {
        Ok(dir.read_labels()?)
    } else if dir.gt_labels().exists() {
        log::info!("labels.stseg missing; using the generator's {}", dir.gt_labels().display());
        Ok(formats::read_labels(&dir.gt_labels())?)
    } else {
        Ok(dir.read_labels()?)
    }
}

fn synth(out: &Path, kind: SceneKind, frames: usize, size: (usize, usize), regions: usize, gc_keep: f32, cfg: &PipelineConfig) -> Result<()> {
    let spec: SyntheticScene = match kind {
        SceneKind::Street => random_street_scene(cfg.seed, size.0, size.1),
        SceneKind::Layered => random_layered_scene(cfg.seed, regions, size.0, size.1),
    };
    let scene = generate_scene(&spec, frames)?;
    let dir = SceneDir::new(out);
    formats::write_frames(&dir.frames(), &scene.video)?;
    formats::write_depth_sequence(&dir.gt(), &scene.depths)?;
    formats::write_labels(&dir.gt_labels(), &scene.labels)?;
    let gc = if gc_keep >= 1.0 { scene.gc_maps.clone() } else { noisy_gc_maps(&scene.gc_maps, gc_keep, cfg.seed) };
    formats::write_gc_maps(&dir.gc(), &gc)?;
    dir.write_intrinsics(&spec.intrinsics)?;
    formats::atomic_write(&dir.scene_json(), serde_json::to_string_pretty(&spec)?.as_bytes())?;
    println!(
        "wrote {} frames of {}x{} ({} regions) to {}",
        frames,
        size.0,
        size.1,
        scene.labels.region_count(),
        out.display()
    );
    Ok(())
}

fn segment(dir: &SceneDir, cfg: &PipelineConfig) -> Result<()> {
    let video = dir.read_video()?;
    let flow = if dir.flow().exists() {
        dir.read_flow(video.len())?
    } else {
        log::info!("no flow/ yet; estimating flow for temporal edges");
        backward_flows(video.frames(), &cfg.flow)?
    };
    let labels = segment_video(&video, &flow, &cfg.segmentation)?;
    formats::write_labels(&dir.labels(), &labels)?;
    println!("{} regions over {} frames", labels.region_count(), labels.frame_count());
    Ok(())
}

fn flow(dir: &SceneDir, cfg: &PipelineConfig) -> Result<()> {
    let video = dir.read_video()?;
    let flows = backward_flows(video.frames(), &cfg.flow)?;
    formats::write_flow_sequence(&dir.flow(), &flows)?;
    println!("{} flow fields", flows.len());
    Ok(())
}

fn features_cmd(dir: &SceneDir, gc_model: Option<&Path>, cfg: &PipelineConfig) -> Result<()> {
    let video = dir.read_video()?;
    let labels = dir.read_labels()?;
    let backward = dir.read_flow(video.len())?;
    let k = dir.intrinsics(cfg, video.width(), video.height())?;
    let table = region_index(&labels);
    let gc = match gc_model {
        Some(p) => {
            let provider = BaselineGc::new(load_model(p, "geometric-context", "train-gc")?, cfg.horizon_row(&k))?;
            let maps = provider.confidence_maps(&video, &labels, &table)?;
            formats::write_gc_maps(&dir.gc(), &maps)?;
            maps
        }
        None => dir.read_gc(&video)?,
    };
    let slices = features::extract_features(&video, &labels, &table, &backward, &gc, cfg.horizon_row(&k))?;
    let t = features::to_table(&slices);
    formats::write_feature_csv(&dir.features(), &t)?;
    formats::write_feature_bin(&dir.features_bin(), &t)?;
    println!("{} region slices x {} features", slices.len(), features::FEATURE_DIM);
    Ok(())
}

fn train_depth(scenes: &[PathBuf], out: &Path, ablation: Ablation, cfg: &PipelineConfig) -> Result<()> {
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for s in scenes {
        let dir = SceneDir::new(s);
        let labels = dir.read_labels()?;
        let slices = dir.read_slices()?;
        let gt = dir.read_gt()?;
        let (r, t) = pipeline::depth_training_rows(&slices, &region_index(&labels), &gt)
            .with_context(|| format!("scene {}", s.display()))?;
        rows.extend(r);
        targets.extend(t);
    }
    let model = pipeline::train_depth_forest(&rows, &targets, ablation, &cfg.depth_forest)?;
    write_model(out, &model)?;
    println!(
        "depth forest ({}, {} rows, {} features, OOB mse {:.4}) -> {}",
        ablation.name(),
        rows.len(),
        model.n_features,
        model.oob_error.unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

/// Edgelet graph with features for a scene on disk.
fn scene_graph(dir: &SceneDir) -> Result<(SegmentationLabelMap, EdgeletGraph)> {
    let video = dir.read_video()?;
    let labels = dir.read_labels()?;
    let backward = dir.read_flow(video.len())?;
    let slices: Vec<SliceFeatures> = dir.read_slices()?;
    let graph = pipeline::edgelet_graph(&labels, &slices, &video, &backward)?;
    Ok((labels, graph))
}

fn train_occl(scenes: &[PathBuf], out: &Path, cfg: &PipelineConfig) -> Result<()> {
    let mut rows = Vec::new();
    let mut classes = Vec::new();
    for s in scenes {
        let dir = SceneDir::new(s);
        let (labels, graph) = scene_graph(&dir).with_context(|| format!("scene {}", s.display()))?;
        let (r, c) = occlusion::training_set(&graph, &labels, &dir.read_gt()?, cfg.occlusion.gap_threshold)?;
        rows.extend(r);
        classes.extend(c);
    }
    let model = occlusion::train_occlusion(&rows, &classes, &cfg.occlusion_forest)?;
    write_model(out, &model)?;
    let non_occl = classes.iter().filter(|&&c| c == occlusion::NON_OCCLUDING).count();
    println!(
        "occlusion forest ({} edgelets, {} non-occluding) -> {}",
        rows.len(),
        non_occl,
        out.display()
    );
    Ok(())
}

fn train_gc(scenes: &[PathBuf], out: &Path, cfg: &PipelineConfig) -> Result<()> {
    let mut rows = Vec::new();
    let mut classes = Vec::new();
    let mut horizon = None;
    for s in scenes {
        let dir = SceneDir::new(s);
        let video = dir.read_video()?;
        let labels = dir.read_labels()?;
        let table = region_index(&labels);
        let gc = formats::read_gc_maps(&dir.gc())?;
        let k = dir.intrinsics(cfg, video.width(), video.height())?;
        horizon.get_or_insert(cfg.horizon_row(&k));
        for sl in dir.read_slices()? {
            let px = table.slice(sl.region, sl.frame).ok_or_else(|| anyhow!("features do not match labels in {}", s.display()))?;
            let mut mean = [0.0f64; GC_CLASSES];
            for &p in px {
                for (m, c) in mean.iter_mut().zip(gc[sl.frame].conf[p]) {
                    *m += c as f64;
                }
            }
            let class = (0..GC_CLASSES).fold(0, |b, c| if mean[c] > mean[b] { c } else { b });
            rows.push(sl.features.as_slice()[..APPEARANCE_DIM].to_vec());
            classes.push(class);
        }
    }
    let x = FeatureMatrix::from_rows(&rows)?;
    let gc = features::train_baseline_gc(&x, &classes, &cfg.gc_forest, horizon.unwrap_or(0.0))?;
    write_model(out, gc.model())?;
    println!("geometric-context forest ({} slices) -> {}", rows.len(), out.display());
    Ok(())
}

fn occl(dir: &SceneDir, model: &Path, cfg: &PipelineConfig) -> Result<()> {
    let model = load_model(model, "occlusion", "train-occl")?;
    let (_, mut graph) = scene_graph(dir)?;
    pipeline::occlusion_gates(&mut graph, &model, cfg)?;
    occlusion::write_jsonl(&dir.edgelets(), &graph)?;
    let occluding = graph.edgelets.iter().filter(|e| e.p_non_occl < 0.5).count();
    println!("{} edgelets, {} likely occluding", graph.edgelets.len(), occluding);
    Ok(())
}

fn infer(dir: &SceneDir, model: Option<&Path>, oracle: bool, cfg: &PipelineConfig) -> Result<()> {
    let video = dir.read_video()?;
    let k = dir.intrinsics(cfg, video.width(), video.height())?;
    let (labels, unary) = if oracle {
        (labels_for(dir)?, dir.read_gt()?)
    } else {
        let path = model.ok_or_else(|| {
            anyhow!("infer needs a depth model: pass --model <file> (see `planedepth train-depth`) or use --oracle-unaries")
        })?;
        let model = load_model(path, "depth", "train-depth")?;
        let labels = dir.read_labels()?;
        let slices = dir.read_slices()?;
        let unary = pipeline::predict_unary(&model, &slices, &labels, &region_index(&labels))?;
        (labels, unary)
    };
    let gates = if dir.edgelets().exists() {
        pipeline::gates_from_records(&occlusion::read_jsonl(&dir.edgelets())?)
    } else if oracle {
        pipeline::oracle_gates(&labels, &unary, cfg.occlusion.gap_threshold)?
    } else {
        log::warn!("no edgelets.jsonl; every boundary gets gate {}", cfg.mrf.default_gate);
        Default::default()
    };
    let out = pipeline::infer(&labels, &k, &unary, &gates, cfg)?;
    let records: Vec<PlaneRecord> = out
        .planes
        .iter()
        .map(|(&(region, frame), &alpha)| PlaneRecord { region, frame, alpha })
        .collect();
    formats::write_planes_csv(&dir.planes(), &records)?;
    formats::write_depth_sequence(&dir.depth(), &out.depths)?;
    let capped = out.solutions.iter().filter(|s| s.stop == StopReason::MaxIterations).count();
    if capped > 0 {
        log::warn!("{capped} frame solves hit the iteration limit");
    }
    println!("{} planes, {} depth maps", records.len(), out.depths.len());
    Ok(())
}

fn eval_cmd(scene: Option<&Path>, pred: Option<&Path>, gt: Option<&Path>, base: Option<LogBase>, json: Option<&Path>, cfg: &PipelineConfig) -> Result<()> {
    let base = base.unwrap_or(cfg.eval.log_base);
    let report = match (scene, pred, gt) {
        (Some(s), _, _) => {
            let dir = SceneDir::new(s);
            let pred = formats::read_depth_sequence(&dir.depth()).context("reading predicted depth (run `infer` first)")?;
            let gt = dir.read_gt()?;
            let classes = if dir.gc().exists() { Some(formats::read_gc_maps(&dir.gc())?) } else { None };
            evaluate(&pred, &gt, classes.as_deref(), base)?
        }
        (None, Some(p), Some(g)) => evaluate(&formats::read_depth_sequence(p)?, &formats::read_depth_sequence(g)?, None, base)?,
        _ => bail!("give a scene directory or both --pred and --gt"),
    };
    print!("{}", report.to_text());
    if let Some(j) = json {
        formats::atomic_write(j, report.to_json().as_bytes())?;
    }
    Ok(())
}

fn crossval_cmd(scenes: &[PathBuf], folds: usize, ablation: Ablation, json: Option<&Path>, cfg: &PipelineConfig) -> Result<()> {
    let samples = scenes
        .iter()
        .map(|s| SceneDir::new(s).load_sample(cfg, true).with_context(|| format!("scene {}", s.display())))
        .collect::<Result<Vec<VideoSample>>>()?;
    let report = crossval(&samples, folds, cfg, ablation)?;
    print!("{}", report.to_text());
    if let Some(j) = json {
        formats::atomic_write(j, serde_json::to_string_pretty(&report)?.as_bytes())?;
    }
    Ok(())
}

fn project_lidar_cmd(dir: &SceneDir, points: &Path, extrinsics: Option<&Path>, cfg: &PipelineConfig) -> Result<()> {
    let labels = dir.read_labels()?;
    let (w, h) = (labels.width(), labels.height());
    let k = dir.intrinsics(cfg, w, h)?;
    let extr = match extrinsics {
        Some(p) => Extrinsics::from_toml(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => Extrinsics::identity(),
    };
    let files = formats::numbered_files(points, &["xyz", "txt", "bin"])?;
    if files.len() != labels.frame_count() {
        bail!("{} point-cloud files for {} frames", files.len(), labels.frame_count());
    }
    let hits = files
        .iter()
        .enumerate()
        .map(|(t, f)| Ok(project_lidar(&LidarScan::new(formats::read_points(f)?, t as f64)?, &extr, &k, w, h)))
        .collect::<Result<Vec<_>>>()?;
    let gt = segment_ground_truth(&hits, &labels, cfg.gt_window)?;
    formats::write_depth_sequence(&dir.gt(), &gt)?;
    let valid: usize = gt.iter().map(|d| d.valid_count()).sum();
    println!("{} depth maps, {valid} valid pixels", gt.len());
    Ok(())
}

fn render_preview(dir: &SceneDir, source: DepthSource) -> Result<()> {
    let maps = match source {
        DepthSource::Depth => formats::read_depth_sequence(&dir.depth()).context("reading depth/ (run `infer` first)")?,
        DepthSource::Gt => dir.read_gt()?,
    };
    for (t, d) in maps.iter().enumerate() {
        formats::write_depth_preview(&dir.preview().join(formats::frame_name(t, "png")), d)?;
    }
    println!("{} previews in {}", maps.len(), dir.preview().display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.global)?;
    match cli.cmd {
        Cmd::Synth {
            out,
            kind,
            frames,
            width,
            height,
            regions,
            gc_keep,
        } => synth(&out, kind, frames, (width, height), regions, gc_keep, &cfg),
        Cmd::Segment { scene } => segment(&SceneDir::new(scene), &cfg),
        Cmd::Flow { scene } => flow(&SceneDir::new(scene), &cfg),
        Cmd::Features { scene, gc_model } => features_cmd(&SceneDir::new(scene), gc_model.as_deref(), &cfg),
        Cmd::TrainDepth { scenes, out, ablation } => train_depth(&scenes, &out, ablation, &cfg),
        Cmd::TrainOccl { scenes, out } => train_occl(&scenes, &out, &cfg),
        Cmd::TrainGc { scenes, out } => train_gc(&scenes, &out, &cfg),
        Cmd::Occl { scene, model } => occl(&SceneDir::new(scene), &model, &cfg),
        Cmd::Infer {
            scene,
            model,
            oracle_unaries,
        } => infer(&SceneDir::new(scene), model.as_deref(), oracle_unaries, &cfg),
        Cmd::Eval {
            scene,
            pred,
            gt,
            log_base,
            json,
        } => eval_cmd(scene.as_deref(), pred.as_deref(), gt.as_deref(), log_base, json.as_deref(), &cfg),
        Cmd::Crossval {
            scenes,
            folds,
            ablation,
            json,
        } => crossval_cmd(&scenes, folds, ablation, json.as_deref(), &cfg),
        Cmd::ProjectLidar {
            scene,
            points,
            extrinsics,
        } => project_lidar_cmd(&SceneDir::new(scene), &points, extrinsics.as_deref(), &cfg),
        Cmd::RenderPreview { scene, source } => render_preview(&SceneDir::new(scene), source),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
