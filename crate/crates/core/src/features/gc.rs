//! Geometric context: per-pixel confidences over scene-layout classes.

use super::blocks::TextureBank;
use super::{appearance_features, APPEARANCE_DIM};
use crate::error::{Error, Result};
use crate::forest::{self, FeatureMatrix, ForestModel, ForestParams, Targets, Task};
use crate::imaging::VideoVolume;
use crate::segmentation::{RegionTable, SegmentationLabelMap};

pub const GC_CLASSES: usize = 5;
pub const GC_CLASS_NAMES: [&str; GC_CLASSES] = ["sky", "ground", "solid", "porous", "movable"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GcClass {
    Sky = 0,
    Ground = 1,
    Solid = 2,
    Porous = 3,
    Movable = 4,
}

impl GcClass {
    pub const ALL: [GcClass; GC_CLASSES] = [GcClass::Sky, GcClass::Ground, GcClass::Solid, GcClass::Porous, GcClass::Movable];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn one_hot(self) -> [f32; GC_CLASSES] {
        let mut v = [0.0; GC_CLASSES];
        v[self.index()] = 1.0;
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometricContextMap {
    pub width: usize,
    pub height: usize,
    pub conf: Vec<[f32; GC_CLASSES]>,
}

impl GeometricContextMap {
    pub fn new(width: usize, height: usize, conf: Vec<[f32; GC_CLASSES]>) -> Result<Self> {
        if conf.len() != width * height {
            return Err(Error::dims(width * height, conf.len()));
        }
        for (i, c) in conf.iter().enumerate() {
            if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InconsistentInput(format!("pixel {i}: confidence outside [0,1]")));
            }
            if c.iter().sum::<f32>() > 1.0 + 1e-6 {
                return Err(Error::InconsistentInput(format!("pixel {i}: confidences sum above 1")));
            }
        }
        Ok(GeometricContextMap { width, height, conf })
    }

    pub fn uniform(width: usize, height: usize, conf: [f32; GC_CLASSES]) -> Self {
        GeometricContextMap {
            width,
            height,
            conf: vec![conf; width * height],
        }
    }

    /// Most confident class per pixel; ties go to the lower class index.
    pub fn argmax(&self, i: usize) -> usize {
        let c = &self.conf[i];
        (0..GC_CLASSES).fold(0, |best, k| if c[k] > c[best] { k } else { best })
    }
}

/// Source of confidence maps, one per frame.
pub trait GeometricContextProvider: Sync {
    fn confidence_maps(
        &self,
        video: &VideoVolume,
        labels: &SegmentationLabelMap,
        table: &RegionTable,
    ) -> Result<Vec<GeometricContextMap>>;
}

/// Externally computed maps, passed through unchanged.
pub struct Precomputed(pub Vec<GeometricContextMap>);

impl GeometricContextProvider for Precomputed {
    fn confidence_maps(&self, video: &VideoVolume, _: &SegmentationLabelMap, _: &RegionTable) -> Result<Vec<GeometricContextMap>> {
        if self.0.len() != video.len() {
            return Err(Error::dims(format!("{} maps", video.len()), format!("{} maps", self.0.len())));
        }
        for m in &self.0 {
            if m.width != video.width() || m.height != video.height() {
                return Err(Error::dims(
                    format!("{}x{}", video.width(), video.height()),
                    format!("{}x{}", m.width, m.height),
                ));
            }
        }
        Ok(self.0.clone())
    }
}

/// Equal confidence 1/5 for every class.
pub struct UniformPrior;

impl GeometricContextProvider for UniformPrior {
    fn confidence_maps(&self, video: &VideoVolume, _: &SegmentationLabelMap, _: &RegionTable) -> Result<Vec<GeometricContextMap>> {
        let p = 1.0 / GC_CLASSES as f32;
        Ok((0..video.len())
            .map(|_| GeometricContextMap::uniform(video.width(), video.height(), [p; GC_CLASSES]))
            .collect())
    }
}

/// Region classifier over appearance features (color, texture, location),
/// with class probabilities broadcast to the region's pixels.
pub struct BaselineGc {
    model: ForestModel,
    horizon: f64,
}

impl BaselineGc {
    pub fn new(model: ForestModel, horizon: f64) -> Result<Self> {
        match model.task {
            Task::Classification { n_classes } if n_classes == GC_CLASSES && model.n_features == APPEARANCE_DIM => {
                Ok(BaselineGc { model, horizon })
            }
            _ => Err(Error::Untrained(format!(
                "geometric-context model must classify {GC_CLASSES} classes from {APPEARANCE_DIM} appearance features"
            ))),
        }
    }

    pub fn model(&self) -> &ForestModel {
        &self.model
    }
}

impl GeometricContextProvider for BaselineGc {
    fn confidence_maps(
        &self,
        video: &VideoVolume,
        labels: &SegmentationLabelMap,
        table: &RegionTable,
    ) -> Result<Vec<GeometricContextMap>> {
        use rayon::prelude::*;
        let bank = TextureBank::new();
        (0..video.len())
            .into_par_iter()
            .map(|t| {
                let frame = video.frame(t);
                let responses = bank.responses(frame);
                let mut map = GeometricContextMap::uniform(video.width(), video.height(), [0.0; GC_CLASSES]);
                for region in slice_regions(labels, t) {
                    let px = table.slice(region, t).expect("region present in frame");
                    let x = appearance_features(frame, &responses, px, self.horizon)?;
                    let p = self.model.predict_proba(&x)?;
                    let c: [f32; GC_CLASSES] = std::array::from_fn(|k| (p[k] as f32).clamp(0.0, 1.0));
                    for &i in px {
                        map.conf[i] = c;
                    }
                }
                Ok(map)
            })
            .collect()
    }
}

/// Region ids present in frame `t`, ascending.
pub(crate) fn slice_regions(labels: &SegmentationLabelMap, t: usize) -> Vec<u32> {
    let mut ids: Vec<u32> = labels.frame(t).to_vec();
    ids.sort_unstable();
    ids.dedup();
    ids
}

pub fn appearance_feature_names() -> Vec<String> {
    super::feature_names()[..APPEARANCE_DIM].to_vec()
}

/// Train the baseline classifier from appearance rows and class labels.
pub fn train_baseline_gc(x: &FeatureMatrix, classes: &[usize], params: &ForestParams, horizon: f64) -> Result<BaselineGc> {
    if x.cols != APPEARANCE_DIM {
        return Err(Error::dims(APPEARANCE_DIM, x.cols));
    }
    let model = forest::train(
        x,
        &Targets::Classification {
            labels: classes.to_vec(),
            n_classes: GC_CLASSES,
        },
        params,
    )?
    .with_feature_names(appearance_feature_names())?;
    BaselineGc::new(model, horizon)
}
