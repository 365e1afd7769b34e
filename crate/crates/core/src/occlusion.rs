//! Occlusion boundaries between adjacent regions.
//!
//! An edgelet is the boundary between two regions in one frame. Each gets a
//! probability of being non-occluding, which gates the smoothness terms of
//! the depth field.

use std::collections::BTreeMap;
use std::io::{BufRead, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::formats::atomic_write;
use crate::dataset::lidar::centered_window;
use crate::error::{Error, Result};
use crate::features::{RegionFeatures, SliceFeatures, COLOR, GEOM, MOTION_OFFSETS};
use crate::flow::FlowField;
use crate::forest::{self, FeatureMatrix, ForestModel, ForestParams, Targets, Task};
use crate::geometry::DepthMap;
use crate::imaging::RgbFrame;
use crate::segmentation::SegmentationLabelMap;

pub const EDGELET_DIM: usize = 16;
/// Class index of a non-occluding boundary in occlusion classifiers.
pub const NON_OCCLUDING: usize = 1;

pub fn edgelet_feature_names() -> Vec<String> {
    let mut n: Vec<String> = ["r", "g", "b", "h", "s", "v"].iter().map(|c| format!("dcolor.{c}")).collect();
    n.extend(crate::features::GC_CLASS_NAMES.iter().map(|c| format!("dgeom.{c}")));
    n.extend(MOTION_OFFSETS.iter().map(|o| format!("dmotion.o{o}")));
    n.push("flow.cross_diff".into());
    n.push("flow.warp_error".into());
    n
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edgelet {
    pub i: u32,
    pub j: u32,
    pub frame: usize,
    /// Pixels of region `i` 4-adjacent to region `j`, ascending.
    pub boundary: Vec<usize>,
    pub features: Option<[f64; EDGELET_DIM]>,
    pub p_non_occl: f64,
}

/// All edgelets of one frame, ordered by `(i, j)`.
pub fn extract_edgelets(labels: &SegmentationLabelMap, frame: usize) -> Vec<Edgelet> {
    let (w, h) = (labels.width(), labels.height());
    let l = labels.frame(frame);
    let mut pairs: BTreeMap<(u32, u32), Vec<usize>> = BTreeMap::new();
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let a = l[p];
            let mut visit = |q: usize| {
                let b = l[q];
                if a < b {
                    pairs.entry((a, b)).or_default().push(p);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
        }
    }
    pairs
        .into_iter()
        .map(|((i, j), mut boundary)| {
            boundary.dedup();
            Edgelet {
                i,
                j,
                frame,
                boundary,
                features: None,
                p_non_occl: 0.5,
            }
        })
        .collect()
}

/// 4-neighbors of `p` labeled `target`.
fn neighbors_in(l: &[u32], w: usize, h: usize, p: usize, target: u32) -> impl Iterator<Item = usize> + '_ {
    let (x, y) = (p % w, p / w);
    [
        (x > 0).then(|| p - 1),
        (x + 1 < w).then(|| p + 1),
        (y > 0).then(|| p - w),
        (y + 1 < h).then(|| p + w),
    ]
    .into_iter()
    .flatten()
    .filter(move |&q| l[q] == target)
}

/// Flow inputs for boundary features of one frame.
pub struct BoundaryFlow<'a> {
    /// Flow from this frame to the previous one (or the nearest available
    /// consecutive field for the first frame).
    pub flow: &'a FlowField,
    /// Current and previous frame for the warp error; `None` for the first
    /// frame.
    pub frames: Option<(&'a RgbFrame, &'a RgbFrame)>,
}

/// Sixteen values: |color difference| (6), |geometric-context difference|
/// (5), L2 distance of each motion offset block (3), mean flow difference
/// across the boundary, and boundary warp error.
pub fn edgelet_features(
    e: &Edgelet,
    labels: &SegmentationLabelMap,
    fi: &RegionFeatures,
    fj: &RegionFeatures,
    flow: Option<&BoundaryFlow<'_>>,
) -> [f64; EDGELET_DIM] {
    let mut out = [0.0; EDGELET_DIM];
    for (k, (a, b)) in fi.color().iter().zip(fj.color()).enumerate() {
        out[k] = (a - b).abs();
    }
    for (k, (a, b)) in fi.geom().iter().zip(fj.geom()).enumerate() {
        out[COLOR.len() + k] = (a - b).abs();
    }
    let base = COLOR.len() + GEOM.len();
    for k in 0..MOTION_OFFSETS.len() {
        out[base + k] = fi
            .motion_offset(k)
            .iter()
            .zip(fj.motion_offset(k))
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
    }
    if let Some(bf) = flow {
        let (w, h) = (labels.width(), labels.height());
        let l = labels.frame(e.frame);
        let (mut diff, mut pairs) = (0.0, 0usize);
        for &p in &e.boundary {
            for q in neighbors_in(l, w, h, p, e.j) {
                diff += (bf.flow.u[p] as f64 - bf.flow.u[q] as f64).hypot(bf.flow.v[p] as f64 - bf.flow.v[q] as f64);
                pairs += 1;
            }
        }
        out[base + 3] = if pairs > 0 { diff / pairs as f64 } else { 0.0 };
        if let Some((cur, prev)) = bf.frames {
            let err: f64 = e
                .boundary
                .iter()
                .map(|&p| {
                    let (x, y) = ((p % w) as f64, (p / w) as f64);
                    let (du, dv) = (bf.flow.u[p] as f64, bf.flow.v[p] as f64);
                    let a = cur.pixels[p];
                    let b = prev.sample(x + du, y + dv);
                    (0..3).map(|c| (a[c] as f64 / 255.0 - b[c] / 255.0).powi(2)).sum::<f64>().sqrt()
                })
                .sum();
            out[base + 4] = err / e.boundary.len() as f64;
        }
    }
    out
}

/// Edgelets of a whole video with same-frame connectivity and per-pair
/// temporal tracks.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeletGraph {
    pub edgelets: Vec<Edgelet>,
    /// Edgelets sharing a region endpoint in the same frame.
    pub connectivity: Vec<Vec<usize>>,
    /// Edgelet indices per region pair, ordered by frame.
    pub tracks: BTreeMap<(u32, u32), Vec<usize>>,
}

impl EdgeletGraph {
    pub fn new(edgelets: Vec<Edgelet>) -> Self {
        let mut by_frame_region: BTreeMap<(usize, u32), Vec<usize>> = BTreeMap::new();
        let mut tracks: BTreeMap<(u32, u32), Vec<usize>> = BTreeMap::new();
        for (n, e) in edgelets.iter().enumerate() {
            by_frame_region.entry((e.frame, e.i)).or_default().push(n);
            by_frame_region.entry((e.frame, e.j)).or_default().push(n);
            tracks.entry((e.i, e.j)).or_default().push(n);
        }
        let mut connectivity = vec![Vec::new(); edgelets.len()];
        for members in by_frame_region.values() {
            for &a in members {
                for &b in members {
                    if a != b {
                        connectivity[a].push(b);
                    }
                }
            }
        }
        for c in &mut connectivity {
            c.sort_unstable();
            c.dedup();
        }
        for t in tracks.values_mut() {
            t.sort_by_key(|&n| edgelets[n].frame);
        }
        EdgeletGraph {
            edgelets,
            connectivity,
            tracks,
        }
    }

    /// Build from every frame of a label map.
    pub fn from_labels(labels: &SegmentationLabelMap) -> Self {
        let all = (0..labels.frame_count()).flat_map(|t| extract_edgelets(labels, t)).collect();
        Self::new(all)
    }

    /// Final probabilities keyed by `(frame, i, j)`.
    pub fn gates(&self) -> BTreeMap<(usize, u32, u32), f64> {
        self.edgelets.iter().map(|e| ((e.frame, e.i, e.j), e.p_non_occl)).collect()
    }
}

/// Fill every edgelet's feature vector.
///
/// `slices` must contain every region slice of `labels`; `backward[t]` is the
/// flow from frame `t + 1` to frame `t` and may be empty.
pub fn compute_edgelet_features(
    graph: &mut EdgeletGraph,
    labels: &SegmentationLabelMap,
    slices: &[SliceFeatures],
    frames: &[RgbFrame],
    backward: &[FlowField],
) -> Result<()> {
    let index: BTreeMap<(usize, u32), &RegionFeatures> =
        slices.iter().map(|s| ((s.frame, s.region), &s.features)).collect();
    for e in &mut graph.edgelets {
        let get = |r: u32| {
            index
                .get(&(e.frame, r))
                .copied()
                .ok_or_else(|| Error::InconsistentInput(format!("no features for region {r} in frame {}", e.frame)))
        };
        let (fi, fj) = (get(e.i)?, get(e.j)?);
        let bf = if backward.is_empty() {
            None
        } else if e.frame == 0 {
            Some(BoundaryFlow {
                flow: &backward[0],
                frames: None,
            })
        } else {
            Some(BoundaryFlow {
                flow: &backward[e.frame - 1],
                frames: Some((&frames[e.frame], &frames[e.frame - 1])),
            })
        };
        e.features = Some(edgelet_features(e, labels, fi, fj, bf.as_ref()));
    }
    Ok(())
}

/// Set unary probabilities from a two-class forest.
pub fn classify_edgelets(graph: &mut EdgeletGraph, model: &ForestModel) -> Result<()> {
    if model.task != (Task::Classification { n_classes: 2 }) || model.n_features != EDGELET_DIM {
        return Err(Error::Untrained(format!(
            "occlusion model must classify 2 classes from {EDGELET_DIM} edgelet features"
        )));
    }
    for e in &mut graph.edgelets {
        let x = e
            .features
            .ok_or_else(|| Error::InconsistentInput("edgelet features not computed".into()))?;
        e.p_non_occl = model.predict_proba(&x)?[NON_OCCLUDING].clamp(0.0, 1.0);
    }
    Ok(())
}

fn ln(x: f64) -> f64 {
    x.max(1e-300).ln()
}

/// Synchronous updates coupling each edgelet to its same-frame neighbors:
/// the score of each state is the unary times, per neighbor, the square root
/// of the product of the two current probabilities of that state.
pub fn smooth_pairwise(graph: &mut EdgeletGraph, iterations: usize) {
    let unary: Vec<f64> = graph.edgelets.iter().map(|e| e.p_non_occl).collect();
    let mut p = unary.clone();
    for _ in 0..iterations {
        let next: Vec<f64> = (0..p.len())
            .map(|n| {
                let nb = &graph.connectivity[n];
                if nb.is_empty() {
                    return unary[n];
                }
                let mut s1 = ln(unary[n]);
                let mut s0 = ln(1.0 - unary[n]);
                for &m in nb {
                    s1 += 0.5 * (ln(p[n]) + ln(p[m]));
                    s0 += 0.5 * (ln(1.0 - p[n]) + ln(1.0 - p[m]));
                }
                let mx = s1.max(s0);
                let (e1, e0) = ((s1 - mx).exp(), (s0 - mx).exp());
                (e1 / (e1 + e0)).clamp(0.0, 1.0)
            })
            .collect();
        p = next;
    }
    for (e, v) in graph.edgelets.iter_mut().zip(p) {
        e.p_non_occl = v;
    }
}

/// Replace each probability by its mean over the track entries within the
/// centered window `[t - window/2, t + (window-1)/2]`.
pub fn temporal_smooth(graph: &mut EdgeletGraph, window: usize) {
    let mut out: Vec<f64> = graph.edgelets.iter().map(|e| e.p_non_occl).collect();
    for track in graph.tracks.values() {
        for &n in track {
            let t = graph.edgelets[n].frame;
            let win = centered_window(t, window, usize::MAX);
            let (s, c) = track
                .iter()
                .filter(|&&m| win.contains(&graph.edgelets[m].frame))
                .fold((0.0, 0usize), |(s, c), &m| (s + graph.edgelets[m].p_non_occl, c + 1));
            out[n] = s / c as f64;
        }
    }
    for (e, v) in graph.edgelets.iter_mut().zip(out) {
        e.p_non_occl = v;
    }
}

/// Occluding iff the median depth gap between boundary pixels and their
/// neighbors across the boundary exceeds `threshold`. `None` when no valid
/// depth pair exists.
pub fn depth_gap_label(e: &Edgelet, labels: &SegmentationLabelMap, depth: &DepthMap, threshold: f64) -> Option<bool> {
    let (w, h) = (labels.width(), labels.height());
    let l = labels.frame(e.frame);
    let mut gaps: Vec<f64> = Vec::new();
    for &p in &e.boundary {
        for q in neighbors_in(l, w, h, p, e.j) {
            if depth.valid[p] && depth.valid[q] {
                gaps.push((depth.values[p] - depth.values[q]).abs());
            }
        }
    }
    if gaps.is_empty() {
        return None;
    }
    Some(median(&mut gaps) > threshold)
}

pub(crate) fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Training rows and labels (1 = non-occluding) from ground-truth depth.
pub fn training_set(graph: &EdgeletGraph, labels: &SegmentationLabelMap, depths: &[DepthMap], threshold: f64) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for e in &graph.edgelets {
        let f = e
            .features
            .ok_or_else(|| Error::InconsistentInput("edgelet features not computed".into()))?;
        if let Some(occluding) = depth_gap_label(e, labels, &depths[e.frame], threshold) {
            x.push(f.to_vec());
            y.push(if occluding { 0 } else { NON_OCCLUDING });
        }
    }
    Ok((x, y))
}

pub fn train_occlusion(rows: &[Vec<f64>], classes: &[usize], params: &ForestParams) -> Result<ForestModel> {
    let x = FeatureMatrix::from_rows(rows)?;
    if x.cols != EDGELET_DIM {
        return Err(Error::dims(EDGELET_DIM, x.cols));
    }
    forest::train(
        &x,
        &Targets::Classification {
            labels: classes.to_vec(),
            n_classes: 2,
        },
        params,
    )?
    .with_feature_names(edgelet_feature_names())
}

/// One serialized edgelet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeletRecord {
    pub pair: (u32, u32),
    pub frame: usize,
    pub boundary_len: usize,
    pub features: Option<Vec<f64>>,
    pub p_non_occl: f64,
}

pub fn write_jsonl(path: &Path, graph: &EdgeletGraph) -> Result<()> {
    let mut buf = Vec::new();
    for e in &graph.edgelets {
        let r = EdgeletRecord {
            pair: (e.i, e.j),
            frame: e.frame,
            boundary_len: e.boundary.len(),
            features: e.features.map(|f| f.to_vec()),
            p_non_occl: e.p_non_occl,
        };
        serde_json::to_writer(&mut buf, &r)?;
        buf.write_all(b"\n")?;
    }
    atomic_write(path, &buf)
}

pub fn read_jsonl(path: &Path) -> Result<Vec<EdgeletRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: EdgeletRecord = serde_json::from_str(&line)
            .map_err(|e| Error::format("edgelet JSONL", format!("line {}: {e}", n + 1)))?;
        if !(0.0..=1.0).contains(&r.p_non_occl) {
            return Err(Error::format("edgelet JSONL", format!("line {}: probability outside [0,1]", n + 1)));
        }
        out.push(r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_tone(w: usize, h: usize) -> SegmentationLabelMap {
        let l = (0..w * h).map(|i| u32::from(i % w >= w / 2)).collect();
        SegmentationLabelMap::from_frame(w, h, l).unwrap()
    }

    fn edgelet(frame: usize, p: f64) -> Edgelet {
        Edgelet {
            i: 0,
            j: 1,
            frame,
            boundary: vec![0],
            features: None,
            p_non_occl: p,
        }
    }

    #[test]
    fn two_tone_has_one_edgelet() {
        let e = extract_edgelets(&two_tone(6, 5), 0);
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].boundary.len(), 5);
        assert!(e[0].boundary.iter().all(|p| p % 6 == 2));
    }

    #[test]
    fn single_region_has_none() {
        let l = SegmentationLabelMap::from_frame(4, 4, vec![0; 16]).unwrap();
        assert!(extract_edgelets(&l, 0).is_empty());
    }

    #[test]
    fn checkerboard_has_no_diagonals() {
        // 2x2 blocks of 2x2 pixels: 0 1 / 2 3
        let l: Vec<u32> = (0..16).map(|i| ((i / 4) / 2 * 2 + (i % 4) / 2) as u32).collect();
        let l = SegmentationLabelMap::from_frame(4, 4, l).unwrap();
        let pairs: Vec<(u32, u32)> = extract_edgelets(&l, 0).iter().map(|e| (e.i, e.j)).collect();
        assert_eq!(pairs, vec![(0, 1), (0, 2), (1, 3), (2, 3)]);
    }

    #[test]
    fn isolated_edgelet_keeps_unary() {
        let mut g = EdgeletGraph::new(vec![edgelet(0, 0.7)]);
        smooth_pairwise(&mut g, 3);
        assert_eq!(g.edgelets[0].p_non_occl, 0.7);
    }

    #[test]
    fn chain_pulls_middle_up() {
        // (0,1) - (1,2) - (2,3) share endpoints pairwise
        let mk = |i, j, p| Edgelet {
            i,
            j,
            frame: 0,
            boundary: vec![0],
            features: None,
            p_non_occl: p,
        };
        let mut g = EdgeletGraph::new(vec![mk(0, 1, 0.9), mk(1, 2, 0.5), mk(2, 3, 0.9)]);
        assert_eq!(g.connectivity, vec![vec![1], vec![0, 2], vec![1]]);
        let mut once = g.clone();
        smooth_pairwise(&mut once, 1);
        // hand iteration: 0.5·(√(0.5·0.9))² vs 0.5·(√(0.5·0.1))²
        assert!((once.edgelets[1].p_non_occl - 0.225 / 0.25).abs() < 1e-12);
        smooth_pairwise(&mut g, 3);
        assert!(g.edgelets[1].p_non_occl > 0.5);
    }

    #[test]
    fn half_is_a_fixed_point() {
        let mk = |i, j| Edgelet {
            i,
            j,
            frame: 0,
            boundary: vec![0],
            features: None,
            p_non_occl: 0.5,
        };
        let mut g = EdgeletGraph::new(vec![mk(0, 1), mk(1, 2), mk(0, 2)]);
        smooth_pairwise(&mut g, 3);
        assert!(g.edgelets.iter().all(|e| e.p_non_occl == 0.5));
    }

    #[test]
    fn temporal_window() {
        let mut g = EdgeletGraph::new((0..60).map(|t| edgelet(t, if t == 30 { 1.0 } else { 0.0 })).collect());
        let mut id = g.clone();
        temporal_smooth(&mut id, 1);
        assert_eq!(id, g);
        temporal_smooth(&mut g, 30);
        let max = g.edgelets.iter().map(|e| e.p_non_occl).fold(0.0, f64::max);
        assert!((max - 1.0 / 30.0).abs() < 1e-12);
        let mut c = EdgeletGraph::new((0..10).map(|t| edgelet(t, 0.3)).collect());
        temporal_smooth(&mut c, 30);
        assert!(c.edgelets.iter().all(|e| (e.p_non_occl - 0.3).abs() < 1e-15));
    }
}
