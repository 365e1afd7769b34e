//! Region-slice features: a region restricted to one frame becomes a
//! fixed-length vector of 133 values.
//!
//! | block    | offset | width | contents                                         |
//! |----------|--------|-------|--------------------------------------------------|
//! | color    | 0      | 6     | mean R, G, B in [0,1]; mean H, S, V              |
//! | texture  | 6      | 15    | mean absolute filter response                    |
//! | location | 21     | 2     | mean row / height; (mean row − horizon) / height |
//! | motion   | 23     | 105   | 35 values for each of the offsets 1, 3, 5        |
//! | geom     | 128    | 5     | mean sky, ground, solid, porous, movable         |
//!
//! Per flow offset the motion block holds an 8-bin orientation histogram
//! weighted by magnitude, the mean du, dv and magnitude, then for Sobel sizes
//! 3, 5, 7 a 4-bin histogram of |∂flow/∂x| followed by one of |∂flow/∂y|.
//! Derivative bins have edges 0, 0.1, 0.5, 2 px. Offsets reaching before the
//! first frame give an all-zero block.

mod blocks;
pub mod gc;

use std::ops::Range;

use rayon::prelude::*;

use crate::dataset::formats::FeatureTable;
use crate::error::{Error, Result};
use crate::flow::{flow_to, FlowField};
use crate::imaging::{Plane, RgbFrame, VideoVolume};
use crate::segmentation::{RegionTable, SegmentationLabelMap};

pub use blocks::{
    color_features, derivative_bin, geometric_features, location_features, motion_features,
    motion_offset_features, orientation_bin, sobel_kernels, texture_features, MotionField, TextureBank,
    DERIVATIVE_BIN_EDGES, MOTION_OFFSETS, MOTION_PER_OFFSET, ORIENTATION_BINS, SOBEL_SIZES, TEXTURE_FILTERS,
};
pub use gc::{
    train_baseline_gc, BaselineGc, GcClass, GeometricContextMap, GeometricContextProvider, Precomputed,
    UniformPrior, GC_CLASSES, GC_CLASS_NAMES,
};

pub const COLOR: Range<usize> = 0..6;
pub const TEXTURE: Range<usize> = 6..21;
pub const LOCATION: Range<usize> = 21..23;
pub const MOTION: Range<usize> = 23..128;
pub const GEOM: Range<usize> = 128..133;
pub const FEATURE_DIM: usize = 133;
/// Color, texture and location.
pub const APPEARANCE_DIM: usize = 23;

pub const BLOCKS: [(&str, Range<usize>); 5] = [
    ("color", COLOR),
    ("texture", TEXTURE),
    ("location", LOCATION),
    ("motion", MOTION),
    ("geom", GEOM),
];

pub fn feature_names() -> Vec<String> {
    let mut n: Vec<String> = ["r", "g", "b", "h", "s", "v"].iter().map(|c| format!("color.{c}")).collect();
    n.extend((0..TEXTURE_FILTERS).map(|k| format!("texture.f{k:02}")));
    n.push("location.y".into());
    n.push("location.horizon".into());
    for o in MOTION_OFFSETS {
        n.extend((0..ORIENTATION_BINS).map(|b| format!("motion.o{o}.orient{b}")));
        n.extend(["mean_du", "mean_dv", "mean_mag"].iter().map(|s| format!("motion.o{o}.{s}")));
        for k in SOBEL_SIZES {
            for axis in ["dx", "dy"] {
                n.extend((0..4).map(|b| format!("motion.o{o}.sobel{k}.{axis}{b}")));
            }
        }
    }
    n.extend(GC_CLASS_NAMES.iter().map(|c| format!("geom.{c}")));
    n
}

/// One region slice's feature vector, in the block order above.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionFeatures(Vec<f64>);

impl RegionFeatures {
    pub fn from_vec(v: Vec<f64>) -> Result<Self> {
        if v.len() != FEATURE_DIM {
            return Err(Error::dims(FEATURE_DIM, v.len()));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("feature vector"));
        }
        Ok(RegionFeatures(v))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn color(&self) -> &[f64] {
        &self.0[COLOR]
    }

    pub fn texture(&self) -> &[f64] {
        &self.0[TEXTURE]
    }

    pub fn location(&self) -> &[f64] {
        &self.0[LOCATION]
    }

    pub fn motion(&self) -> &[f64] {
        &self.0[MOTION]
    }

    /// Motion values of the `k`-th offset (0, 1, 2 for offsets 1, 3, 5).
    pub fn motion_offset(&self, k: usize) -> &[f64] {
        let s = MOTION.start + k * MOTION_PER_OFFSET;
        &self.0[s..s + MOTION_PER_OFFSET]
    }

    pub fn geom(&self) -> &[f64] {
        &self.0[GEOM]
    }
}

/// Blocks computed separately, to be concatenated.
#[derive(Debug, Clone, Default)]
pub struct FeatureBlocks {
    pub color: Option<[f64; 6]>,
    pub texture: Option<[f64; TEXTURE_FILTERS]>,
    pub location: Option<[f64; 2]>,
    pub motion: Option<Vec<f64>>,
    pub geom: Option<[f64; GC_CLASSES]>,
}

pub fn assemble_features(b: &FeatureBlocks) -> Result<RegionFeatures> {
    let missing = |name: &str| Error::InconsistentInput(format!("feature block {name} missing"));
    let mut v = Vec::with_capacity(FEATURE_DIM);
    v.extend_from_slice(&b.color.ok_or_else(|| missing("color"))?);
    v.extend_from_slice(&b.texture.ok_or_else(|| missing("texture"))?);
    v.extend_from_slice(&b.location.ok_or_else(|| missing("location"))?);
    let m = b.motion.as_ref().ok_or_else(|| missing("motion"))?;
    if m.len() != MOTION.len() {
        return Err(Error::dims(MOTION.len(), m.len()));
    }
    v.extend_from_slice(m);
    v.extend_from_slice(&b.geom.ok_or_else(|| missing("geom"))?);
    RegionFeatures::from_vec(v)
}

/// The 23 appearance values (color, texture, location) of one region slice.
pub fn appearance_features(frame: &RgbFrame, responses: &[Plane], pixels: &[usize], horizon: f64) -> Result<Vec<f64>> {
    let mut v = Vec::with_capacity(APPEARANCE_DIM);
    v.extend_from_slice(&color_features(frame, pixels)?);
    v.extend_from_slice(&texture_features(responses, pixels)?);
    v.extend_from_slice(&location_features(pixels, frame.width, frame.height, horizon)?);
    Ok(v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceFeatures {
    pub region: u32,
    pub frame: usize,
    pub features: RegionFeatures,
}

/// Motion fields of frame `t` for offsets 1, 3, 5.
pub fn motion_fields(backward: &[FlowField], width: usize, height: usize, t: usize) -> [MotionField; 3] {
    MOTION_OFFSETS.map(|o| MotionField::new(flow_to(backward, width, height, t, o)))
}

/// Features of every region slice, ordered by frame then region id.
///
/// `backward[t]` is the flow from frame `t + 1` to frame `t`; `gc` holds one
/// map per frame.
pub fn extract_features(
    video: &VideoVolume,
    labels: &SegmentationLabelMap,
    table: &RegionTable,
    backward: &[FlowField],
    gc: &[GeometricContextMap],
    horizon: f64,
) -> Result<Vec<SliceFeatures>> {
    let (w, h, n) = (video.width(), video.height(), video.len());
    if labels.width() != w || labels.height() != h || labels.frame_count() != n {
        return Err(Error::dims(
            format!("{w}x{h}x{n}"),
            format!("{}x{}x{}", labels.width(), labels.height(), labels.frame_count()),
        ));
    }
    if backward.len() + 1 != n {
        return Err(Error::dims(format!("{} flow fields", n - 1), format!("{} flow fields", backward.len())));
    }
    if gc.len() != n {
        return Err(Error::dims(format!("{n} confidence maps"), format!("{} confidence maps", gc.len())));
    }
    let bank = TextureBank::new();
    let per_frame: Vec<Vec<SliceFeatures>> = (0..n)
        .into_par_iter()
        .map(|t| {
            let frame = video.frame(t);
            let responses = bank.responses(frame);
            let motion = motion_fields(backward, w, h, t);
            gc::slice_regions(labels, t)
                .into_iter()
                .map(|region| {
                    let px = table.slice(region, t).expect("region present in frame");
                    let blocks = FeatureBlocks {
                        color: Some(color_features(frame, px)?),
                        texture: Some(texture_features(&responses, px)?),
                        location: Some(location_features(px, w, h, horizon)?),
                        motion: Some(motion_features(&motion, px)?),
                        geom: Some(geometric_features(&gc[t], w, h, px)?),
                    };
                    Ok(SliceFeatures {
                        region,
                        frame: t,
                        features: assemble_features(&blocks)?,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_frame.into_iter().flatten().collect())
}

/// Feature table with leading `region` and `frame` columns.
pub fn to_table(slices: &[SliceFeatures]) -> FeatureTable {
    let mut columns = vec!["region".to_string(), "frame".to_string()];
    columns.extend(feature_names());
    FeatureTable {
        columns,
        rows: slices
            .iter()
            .map(|s| {
                let mut r = vec![s.region as f64, s.frame as f64];
                r.extend_from_slice(s.features.as_slice());
                r
            })
            .collect(),
    }
}

pub fn from_table(t: &FeatureTable) -> Result<Vec<SliceFeatures>> {
    let expected: Vec<String> = ["region".to_string(), "frame".to_string()].into_iter().chain(feature_names()).collect();
    if t.columns != expected {
        return Err(Error::InconsistentInput("feature table columns do not match the feature layout".into()));
    }
    t.rows
        .iter()
        .map(|r| {
            Ok(SliceFeatures {
                region: r[0] as u32,
                frame: r[1] as usize,
                features: RegionFeatures::from_vec(r[2..].to_vec())?,
            })
        })
        .collect()
}

/// Column indices kept by an ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Ablation {
    #[serde(rename = "ALL")]
    All,
    #[serde(rename = "App+Flow")]
    AppearanceFlow,
    #[serde(rename = "Appearance")]
    Appearance,
}

impl Ablation {
    pub fn columns(self) -> Vec<usize> {
        match self {
            Ablation::All => (0..FEATURE_DIM).collect(),
            Ablation::AppearanceFlow => (0..MOTION.end).collect(),
            Ablation::Appearance => (0..APPEARANCE_DIM).collect(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::All => "ALL",
            Ablation::AppearanceFlow => "App+Flow",
            Ablation::Appearance => "Appearance",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "all" => Ok(Ablation::All),
            "app+flow" | "appearance+flow" | "app-flow" => Ok(Ablation::AppearanceFlow),
            "appearance" | "app" => Ok(Ablation::Appearance),
            _ => Err(Error::InvalidParameter(format!(
                "unknown ablation {s:?} (expected ALL, App+Flow or Appearance)"
            ))),
        }
    }
}
