//! Depth metrics and k-fold cross-validation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::features::{Ablation, GeometricContextMap, GC_CLASS_NAMES};
use crate::geometry::DepthMap;
use crate::pipeline::{self, PreparedVideo, VideoSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LogBase {
    #[default]
    #[serde(rename = "10")]
    Ten,
    #[serde(rename = "e")]
    E,
}

impl LogBase {
    pub fn log(self, x: f64) -> f64 {
        match self {
            LogBase::Ten => x.log10(),
            LogBase::E => x.ln(),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            LogBase::Ten => "log10",
            LogBase::E => "ln",
        }
    }
}

impl std::str::FromStr for LogBase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "10" | "log10" => Ok(LogBase::Ten),
            "e" | "ln" => Ok(LogBase::E),
            _ => Err(Error::InvalidParameter(format!("unknown log base {s:?} (expected 10 or e)"))),
        }
    }
}

/// Running means over pixels.
///
/// Means are updated incrementally, so a constant error is reproduced
/// exactly rather than through a rounded sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorStats {
    pub log_error: f64,
    pub rel_error: f64,
    pub pixel_count: usize,
}

impl ErrorStats {
    pub fn push(&mut self, log_err: f64, rel_err: f64) {
        self.pixel_count += 1;
        let n = self.pixel_count as f64;
        self.log_error += (log_err - self.log_error) / n;
        self.rel_error += (rel_err - self.rel_error) / n;
    }

    /// Pixel-weighted combination.
    pub fn merge(&mut self, other: &ErrorStats) {
        if other.pixel_count == 0 {
            return;
        }
        let n = (self.pixel_count + other.pixel_count) as f64;
        let w = other.pixel_count as f64 / n;
        self.log_error += (other.log_error - self.log_error) * w;
        self.rel_error += (other.rel_error - self.rel_error) * w;
        self.pixel_count += other.pixel_count;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub log_base: LogBase,
    #[serde(flatten)]
    pub overall: ErrorStats,
    /// Keyed by class name; a pixel belongs to its most confident class.
    pub per_class: BTreeMap<String, ErrorStats>,
}

impl EvalReport {
    pub fn log_error(&self) -> f64 {
        self.overall.log_error
    }

    pub fn rel_error(&self) -> f64 {
        self.overall.rel_error
    }

    pub fn pixel_count(&self) -> usize {
        self.overall.pixel_count
    }

    /// Pixel-weighted aggregate, merged in slice order.
    pub fn merge(reports: &[EvalReport]) -> Result<EvalReport> {
        let first = reports.first().ok_or(Error::EmptyInput("no reports to merge"))?;
        let mut out = EvalReport {
            log_base: first.log_base,
            overall: ErrorStats::default(),
            per_class: BTreeMap::new(),
        };
        for r in reports {
            if r.log_base != out.log_base {
                return Err(Error::InconsistentInput("reports use different log bases".into()));
            }
            out.overall.merge(&r.overall);
            for (c, s) in &r.per_class {
                out.per_class.entry(c.clone()).or_default().merge(s);
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned columns: scope, pixels, log error, relative error.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<10} {:>10} {:>10} {:>10}", "scope", "pixels", self.log_base.label(), "rel");
        let mut line = |name: &str, st: &ErrorStats| {
            let _ = writeln!(
                s,
                "{:<10} {:>10} {:>10.4} {:>10.4}",
                name, st.pixel_count, st.log_error, st.rel_error
            );
        };
        line("all", &self.overall);
        for (c, st) in &self.per_class {
            line(c, st);
        }
        s
    }
}

/// Mean log and relative depth error over pixels with valid ground truth.
///
/// Predictions must be valid wherever ground truth is. With class maps, each
/// pixel is also counted under its most confident class.
pub fn evaluate(
    pred: &[DepthMap],
    gt: &[DepthMap],
    classes: Option<&[GeometricContextMap]>,
    base: LogBase,
) -> Result<EvalReport> {
    if pred.len() != gt.len() {
        return Err(Error::dims(format!("{} ground-truth frames", gt.len()), format!("{} predicted frames", pred.len())));
    }
    if let Some(c) = classes {
        if c.len() != gt.len() {
            return Err(Error::dims(format!("{} class maps", gt.len()), format!("{} class maps", c.len())));
        }
    }
    let mut overall = ErrorStats::default();
    let mut per_class: BTreeMap<String, ErrorStats> = BTreeMap::new();
    for (t, (p, g)) in pred.iter().zip(gt).enumerate() {
        if p.width != g.width || p.height != g.height {
            return Err(Error::dims(
                format!("ground truth {}x{}", g.width, g.height),
                format!("prediction {}x{} (frame {t})", p.width, p.height),
            ));
        }
        let cmap = match classes {
            Some(c) => {
                let m = &c[t];
                if m.width != g.width || m.height != g.height {
                    return Err(Error::dims(
                        format!("ground truth {}x{}", g.width, g.height),
                        format!("class map {}x{} (frame {t})", m.width, m.height),
                    ));
                }
                Some(m)
            }
            None => None,
        };
        for i in 0..g.values.len() {
            if !g.valid[i] {
                continue;
            }
            if !p.valid[i] {
                return Err(Error::InconsistentInput(format!(
                    "prediction missing at pixel {i} of frame {t} where ground truth is valid"
                )));
            }
            let (d, dh) = (g.values[i], p.values[i]);
            let le = base.log(dh / d).abs();
            let re = ((d - dh) / d).abs();
            if !le.is_finite() || !re.is_finite() {
                return Err(Error::NonFinite("depth values (depths must be positive)"));
            }
            overall.push(le, re);
            if let Some(m) = cmap {
                per_class.entry(GC_CLASS_NAMES[m.argmax(i)].to_string()).or_default().push(le, re);
            }
        }
    }
    if overall.pixel_count == 0 {
        return Err(Error::EmptyInput("no valid ground-truth pixels to evaluate"));
    }
    Ok(EvalReport {
        log_base: base,
        overall,
        per_class,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub ablation: Ablation,
    pub folds: Vec<FoldReport>,
    pub aggregate: EvalReport,
}

impl CrossValReport {
    pub fn to_text(&self) -> String {
        let mut s = format!("ablation {}\n", self.ablation.name());
        for f in &self.folds {
            let _ = write!(s, "-- fold {} (test videos {:?})\n{}", f.fold, f.test, f.report.to_text());
        }
        let _ = write!(s, "-- aggregate\n{}", self.aggregate.to_text());
        s
    }
}

/// Video indices of each fold: video `v` belongs to fold `v % k`.
pub fn fold_split(n: usize, k: usize, fold: usize) -> (Vec<usize>, Vec<usize>) {
    (0..n).partition(|v| v % k != fold)
}

/// Train on k−1 folds, evaluate on the held-out one, for every fold.
pub fn crossval(samples: &[VideoSample], k: usize, cfg: &PipelineConfig, ablation: Ablation) -> Result<CrossValReport> {
    if k < 2 {
        return Err(Error::InvalidParameter("cross-validation needs at least 2 folds".into()));
    }
    if samples.len() < k {
        return Err(Error::InvalidParameter(format!(
            "{} videos cannot be split into {k} folds",
            samples.len()
        )));
    }
    let prepared: Vec<PreparedVideo> = samples
        .par_iter()
        .map(|s| pipeline::prepare(s, cfg))
        .collect::<Result<_>>()?;
    let folds: Vec<FoldReport> = (0..k)
        .into_par_iter()
        .map(|fold| {
            let (train, test) = fold_split(samples.len(), k, fold);
            assert!(train.iter().all(|v| !test.contains(v)), "fold {fold} leaks a video");
            let train_set: Vec<&PreparedVideo> = train.iter().map(|&v| &prepared[v]).collect();
            let depth = pipeline::train_depth_model(&train_set, ablation, &cfg.depth_forest)?;
            let occl = pipeline::train_occlusion_model(&train_set, cfg)?;
            let reports = test
                .iter()
                .map(|&v| {
                    let p = &prepared[v];
                    let out = pipeline::run_inference(p, &depth, Some(&occl), cfg)?;
                    evaluate(&out.depths, &p.sample.gt, Some(&p.sample.gc), cfg.eval.log_base)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(FoldReport {
                fold,
                train,
                test,
                report: EvalReport::merge(&reports)?,
            })
        })
        .collect::<Result<_>>()?;
    let aggregate = EvalReport::merge(&folds.iter().map(|f| f.report.clone()).collect::<Vec<_>>())?;
    Ok(CrossValReport {
        ablation,
        folds,
        aggregate,
    })
}
