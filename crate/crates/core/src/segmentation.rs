//! Spatio-temporal over-segmentation of a video volume.
//!
//! Graph-based agglomeration in the style of Felzenszwalb–Huttenlocher over
//! a 3D pixel graph. Spatial edges join 8-neighbors within a frame; temporal
//! edges join each pixel of frame `t` to the pixel its backward flow lands on
//! in frame `t - 1`. Region IDs are therefore persistent across frames.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::imaging::VideoVolume;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentParams {
    /// Scale of the adaptive merge threshold `k / |C|`. Edge weights are RGB
    /// distances on the 0..255 scale.
    pub merge_threshold: f64,
    /// Minimum region size in pixels per frame; the whole-volume minimum is
    /// this times the frame count.
    pub min_region_size: usize,
}

impl Default for SegmentParams {
    fn default() -> Self {
        SegmentParams {
            merge_threshold: 300.0,
            min_region_size: 64,
        }
    }
}

/// Region ID for every pixel of every frame, frame-major then row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationLabelMap {
    width: usize,
    height: usize,
    frames: usize,
    labels: Vec<u32>,
    region_count: usize,
}

impl SegmentationLabelMap {
    /// Validates dimensions and relabels IDs to be contiguous in order of
    /// first appearance.
    pub fn new(width: usize, height: usize, frames: usize, labels: Vec<u32>) -> Result<Self> {
        if width * height * frames == 0 {
            return Err(Error::EmptyInput("label map has no pixels"));
        }
        if labels.len() != width * height * frames {
            return Err(Error::dims(width * height * frames, labels.len()));
        }
        let mut remap: BTreeMap<u32, u32> = BTreeMap::new();
        let mut next = 0u32;
        let labels = labels
            .into_iter()
            .map(|l| {
                *remap.entry(l).or_insert_with(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect();
        Ok(SegmentationLabelMap {
            width,
            height,
            frames,
            labels,
            region_count: next as usize,
        })
    }

    /// A single-frame map from one label slice.
    pub fn from_frame(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        Self::new(width, height, 1, labels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn frame_count(&self) -> usize {
        self.frames
    }

    pub fn region_count(&self) -> usize {
        self.region_count
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn frame(&self, t: usize) -> &[u32] {
        let n = self.width * self.height;
        &self.labels[t * n..(t + 1) * n]
    }

    pub fn label(&self, t: usize, x: usize, y: usize) -> u32 {
        self.labels[t * self.width * self.height + y * self.width + x]
    }
}

#[derive(Debug, Clone, Copy)]
struct Edge {
    w: f64,
    a: u32,
    b: u32,
}

struct Forest {
    parent: Vec<u32>,
    size: Vec<u32>,
    internal: Vec<f64>,
}

impl Forest {
    fn new(n: usize) -> Self {
        Forest {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
            internal: vec![0.0; n],
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32, w: f64) {
        // Root is the lower index, so the result is independent of size ties.
        let (root, child) = if a < b { (a, b) } else { (b, a) };
        self.parent[child as usize] = root;
        self.size[root as usize] += self.size[child as usize];
        self.internal[root as usize] = self.internal[a as usize]
            .max(self.internal[b as usize])
            .max(w);
    }
}

fn color_distance(p: [u8; 3], q: [u8; 3]) -> f64 {
    let d: f64 = (0..3).map(|c| (p[c] as f64 - q[c] as f64).powi(2)).sum();
    d.sqrt()
}

/// Segment a video into spatio-temporal regions.
///
/// `flow` holds backward fields (`flow[t]` maps frame `t + 1` to frame `t`)
/// and may be empty, in which case temporal edges join co-located pixels.
pub fn segment_video(
    video: &VideoVolume,
    flow: &[FlowField],
    params: &SegmentParams,
) -> Result<SegmentationLabelMap> {
    if video.is_empty() {
        return Err(Error::EmptyInput("video has no frames"));
    }
    if !params.merge_threshold.is_finite() || params.merge_threshold < 0.0 {
        return Err(Error::InvalidParameter("merge_threshold must be >= 0".into()));
    }
    let (w, h, nf) = (video.width(), video.height(), video.len());
    if !flow.is_empty() {
        if flow.len() != nf - 1 {
            return Err(Error::dims(
                format!("{} flow fields", nf - 1),
                format!("{} flow fields", flow.len()),
            ));
        }
        if let Some(f) = flow.iter().find(|f| f.width != w || f.height != h) {
            return Err(Error::dims(format!("{w}x{h}"), format!("{}x{} flow", f.width, f.height)));
        }
    }
    let n = w * h;
    let node = |t: usize, x: usize, y: usize| (t * n + y * w + x) as u32;

    let mut edges = Vec::with_capacity(nf * n * 5);
    for t in 0..nf {
        let frame = video.frame(t);
        for y in 0..h {
            for x in 0..w {
                let p = frame.pixel(x, y);
                let mut push = |x2: usize, y2: usize| {
                    edges.push(Edge {
                        w: color_distance(p, frame.pixel(x2, y2)),
                        a: node(t, x, y),
                        b: node(t, x2, y2),
                    });
                };
                if x + 1 < w {
                    push(x + 1, y);
                }
                if y + 1 < h {
                    push(x, y + 1);
                    if x + 1 < w {
                        push(x + 1, y + 1);
                    }
                    if x > 0 {
                        push(x - 1, y + 1);
                    }
                }
            }
        }
        if t == 0 {
            continue;
        }
        let prev = video.frame(t - 1);
        // Flow magnitude of the field leaving frame s; frame 0 borrows frame 1's.
        let magnitude = |s: usize, i: usize| -> f64 {
            if flow.is_empty() {
                0.0
            } else {
                flow[s.max(1) - 1].magnitude(i)
            }
        };
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let (tx, ty) = if flow.is_empty() {
                    (x, y)
                } else {
                    let (du, dv) = flow[t - 1].at(x, y);
                    (
                        (x as f64 + du).round().clamp(0.0, (w - 1) as f64) as usize,
                        (y as f64 + dv).round().clamp(0.0, (h - 1) as f64) as usize,
                    )
                };
                let j = ty * w + tx;
                let cd = color_distance(frame.pixel(x, y), prev.pixel(tx, ty));
                let md = (magnitude(t, i) - magnitude(t - 1, j)).abs();
                edges.push(Edge {
                    w: 0.5 * (cd + md),
                    a: node(t - 1, tx, ty),
                    b: node(t, x, y),
                });
            }
        }
    }
    edges.sort_by(|e, f| e.w.total_cmp(&f.w).then(e.a.cmp(&f.a)).then(e.b.cmp(&f.b)));

    let mut forest = Forest::new(n * nf);
    let k = params.merge_threshold;
    for e in &edges {
        let (ra, rb) = (forest.find(e.a), forest.find(e.b));
        if ra == rb {
            continue;
        }
        let ta = forest.internal[ra as usize] + k / forest.size[ra as usize] as f64;
        let tb = forest.internal[rb as usize] + k / forest.size[rb as usize] as f64;
        if e.w <= ta.min(tb) {
            forest.union(ra, rb, e.w);
        }
    }
    // Flow-guided links can join pixels that are not neighbors. Split every
    // region into its connected components, then absorb small components
    // across neighboring pixels only.
    let coords = |p: u32| {
        let p = p as usize;
        ((p / n) as i64, (p % w) as i64, ((p % n) / w) as i64)
    };
    let mut parts = Forest::new(n * nf);
    for p in 0..(n * nf) as u32 {
        let (t, x, y) = coords(p);
        let root = forest.find(p);
        for (dt, dx, dy) in FORWARD_NEIGHBORS {
            let (t2, x2, y2) = (t + dt, x + dx, y + dy);
            if t2 >= nf as i64 || x2 < 0 || x2 >= w as i64 || y2 >= h as i64 {
                continue;
            }
            let q = node(t2 as usize, x2 as usize, y2 as usize);
            if forest.find(q) == root {
                let (a, b) = (parts.find(p), parts.find(q));
                if a != b {
                    parts.union(a, b, 0.0);
                }
            }
        }
    }
    let min_size = (params.min_region_size * nf) as u32;
    if min_size > 1 {
        for e in &edges {
            let ((ta, xa, ya), (tb, xb, yb)) = (coords(e.a), coords(e.b));
            let neighbors = if ta == tb { (xa - xb).abs() <= 1 && (ya - yb).abs() <= 1 } else { (xa, ya) == (xb, yb) };
            if !neighbors {
                continue;
            }
            let (ra, rb) = (parts.find(e.a), parts.find(e.b));
            if ra != rb && (parts.size[ra as usize] < min_size || parts.size[rb as usize] < min_size) {
                parts.union(ra, rb, e.w);
            }
        }
    }
    let labels = (0..(n * nf) as u32).map(|i| parts.find(i)).collect();
    SegmentationLabelMap::new(w, h, nf, labels)
}

/// Forward half of the region neighborhood as `(dt, dx, dy)`: the 8
/// spatial neighbors plus the same pixel in the next frame.
const FORWARD_NEIGHBORS: [(i64, i64, i64); 5] = [(0, 1, 0), (0, -1, 1), (0, 0, 1), (0, 1, 1), (1, 0, 0)];

/// Per-region bookkeeping derived from a label map.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionInfo {
    pub id: u32,
    pub pixel_count: usize,
    /// Pixel indices (row-major within the frame) per frame the region
    /// occupies.
    pub pixels: BTreeMap<usize, Vec<usize>>,
    /// Inclusive `(x0, y0, x1, y1)` per frame.
    pub bbox: BTreeMap<usize, (usize, usize, usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionTable {
    pub regions: Vec<RegionInfo>,
    /// Unordered pairs `(i, j)` with `i < j` that are 4-adjacent in at least
    /// one frame.
    pub adjacency: BTreeSet<(u32, u32)>,
}

impl RegionTable {
    pub fn slice(&self, region: u32, frame: usize) -> Option<&[usize]> {
        self.regions
            .get(region as usize)
            .and_then(|r| r.pixels.get(&frame))
            .map(|v| v.as_slice())
    }
}

pub fn region_index(labels: &SegmentationLabelMap) -> RegionTable {
    let (w, h) = (labels.width(), labels.height());
    let mut regions: Vec<RegionInfo> = (0..labels.region_count() as u32)
        .map(|id| RegionInfo {
            id,
            pixel_count: 0,
            pixels: BTreeMap::new(),
            bbox: BTreeMap::new(),
        })
        .collect();
    let mut adjacency = BTreeSet::new();
    for t in 0..labels.frame_count() {
        let frame = labels.frame(t);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let l = frame[i];
                let r = &mut regions[l as usize];
                r.pixel_count += 1;
                r.pixels.entry(t).or_default().push(i);
                let b = r.bbox.entry(t).or_insert((x, y, x, y));
                *b = (b.0.min(x), b.1.min(y), b.2.max(x), b.3.max(y));
                if x + 1 < w && frame[i + 1] != l {
                    let m = frame[i + 1];
                    adjacency.insert((l.min(m), l.max(m)));
                }
                if y + 1 < h && frame[i + w] != l {
                    let m = frame[i + w];
                    adjacency.insert((l.min(m), l.max(m)));
                }
            }
        }
    }
    RegionTable { regions, adjacency }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::RgbFrame;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::VecDeque;

    fn two_tone(w: usize, h: usize, frames: usize) -> VideoVolume {
        let f = RgbFrame::new(
            w,
            h,
            (0..w * h)
                .map(|i| if i % w < w / 2 { [0, 0, 0] } else { [255, 255, 255] })
                .collect(),
        )
        .unwrap();
        VideoVolume::new(vec![f; frames]).unwrap()
    }

    /// Components under 8-neighborhood in space plus co-located temporal links.
    fn component_count(labels: &SegmentationLabelMap) -> usize {
        let (w, h, nf) = (labels.width(), labels.height(), labels.frame_count());
        let n = w * h;
        let mut seen = vec![false; n * nf];
        let mut count = 0;
        for start in 0..n * nf {
            if seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            let l = labels.labels()[start];
            let mut queue = VecDeque::from([start]);
            while let Some(p) = queue.pop_front() {
                let (t, i) = (p / n, p % n);
                let (x, y) = ((i % w) as isize, (i / w) as isize);
                let mut nbrs = vec![];
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (xx, yy) = (x + dx, y + dy);
                        if (dx, dy) != (0, 0) && xx >= 0 && yy >= 0 && xx < w as isize && yy < h as isize {
                            nbrs.push(t * n + yy as usize * w + xx as usize);
                        }
                    }
                }
                if t > 0 {
                    nbrs.push(p - n);
                }
                if t + 1 < nf {
                    nbrs.push(p + n);
                }
                for q in nbrs {
                    if !seen[q] && labels.labels()[q] == l {
                        seen[q] = true;
                        queue.push_back(q);
                    }
                }
            }
        }
        count
    }

    fn params(k: f64, min: usize) -> SegmentParams {
        SegmentParams {
            merge_threshold: k,
            min_region_size: min,
        }
    }

    #[test]
    fn uniform_video_is_one_region() {
        let v = VideoVolume::new(vec![RgbFrame::filled(8, 6, [128, 128, 128]); 3]).unwrap();
        let s = segment_video(&v, &[], &params(1.0, 1)).unwrap();
        assert_eq!(s.region_count(), 1);
    }

    #[test]
    fn two_tone_split_spans_all_frames() {
        let v = two_tone(8, 8, 3);
        // black/white distance is 255*sqrt(3) ~ 441.7
        let s = segment_video(&v, &[], &params(400.0, 1)).unwrap();
        assert_eq!(s.region_count(), 2);
        assert_eq!(component_count(&s), 2);
        let table = region_index(&s);
        for r in &table.regions {
            assert_eq!(r.pixels.len(), 3);
            assert_eq!(r.pixel_count, 8 * 4 * 3);
        }
    }

    #[test]
    fn two_tone_merges_when_threshold_exceeds_distance_times_size() {
        let v = two_tone(8, 8, 3);
        // Each half has 96 pixels; merging needs k / 96 >= 441.7.
        let s = segment_video(&v, &[], &params(441.7 * 96.0 + 1.0, 1)).unwrap();
        assert_eq!(s.region_count(), 1);
    }

    #[test]
    fn empty_flow_length_mismatch_rejected() {
        let v = two_tone(4, 4, 3);
        let err = segment_video(&v, &[FlowField::zeros(4, 4)], &params(1.0, 1)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn small_regions_are_absorbed() {
        let mut f = RgbFrame::filled(10, 10, [20, 20, 20]);
        f.pixels[55] = [250, 0, 0];
        let v = VideoVolume::new(vec![f; 2]).unwrap();
        assert_eq!(segment_video(&v, &[], &params(10.0, 1)).unwrap().region_count(), 2);
        assert_eq!(segment_video(&v, &[], &params(10.0, 4)).unwrap().region_count(), 1);
    }

    #[test]
    fn flow_links_moving_content() {
        // A bright bar moving 2 px right per frame stays one region when the
        // temporal edges follow the flow.
        let (w, h) = (16, 6);
        let frames: Vec<RgbFrame> = (0..3)
            .map(|t| {
                RgbFrame::new(
                    w,
                    h,
                    (0..w * h)
                        .map(|i| {
                            let x = i % w;
                            if (2 + 2 * t..5 + 2 * t).contains(&x) {
                                [240, 240, 240]
                            } else {
                                [10, 10, 10]
                            }
                        })
                        .collect(),
                )
                .unwrap()
            })
            .collect();
        let video = VideoVolume::new(frames).unwrap();
        let flow = vec![FlowField::uniform(w, h, -2.0, 0.0); 2];
        let s = segment_video(&video, &flow, &params(50.0, 1)).unwrap();
        let bar: BTreeSet<u32> = (0..3).map(|t| s.label(t, 3 + 2 * t, 2)).collect();
        assert_eq!(bar.len(), 1);
    }

    #[test]
    fn region_index_single_region() {
        let s = SegmentationLabelMap::new(4, 4, 2, vec![7; 32]).unwrap();
        let t = region_index(&s);
        assert_eq!(t.regions.len(), 1);
        assert_eq!(t.regions[0].pixel_count, 32);
        assert!(t.adjacency.is_empty());
    }

    #[test]
    fn region_index_two_tone() {
        let labels: Vec<u32> = (0..16).map(|i| u32::from(i % 4 >= 2)).collect();
        let t = region_index(&SegmentationLabelMap::new(4, 4, 1, labels).unwrap());
        assert_eq!(t.regions.len(), 2);
        assert_eq!(t.adjacency, BTreeSet::from([(0, 1)]));
    }

    #[test]
    fn region_index_adjacency_matches_pair_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (w, h, nf) = (9, 7, 2);
        let labels: Vec<u32> = (0..w * h * nf).map(|_| rng.random_range(0..3)).collect();
        let map = SegmentationLabelMap::new(w, h, nf, labels).unwrap();
        let table = region_index(&map);
        let mut expected = BTreeSet::new();
        for t in 0..nf {
            for y in 0..h {
                for x in 0..w {
                    for (x2, y2) in [(x + 1, y), (x, y + 1)] {
                        if x2 < w && y2 < h {
                            let (a, b) = (map.label(t, x, y), map.label(t, x2, y2));
                            if a != b {
                                expected.insert((a.min(b), a.max(b)));
                            }
                        }
                    }
                }
            }
        }
        assert_eq!(table.adjacency, expected);
    }

    fn block_video(seed: u64) -> VideoVolume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (12, 10);
        let colors: Vec<[u8; 3]> = (0..6).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let frames = (0..3)
            .map(|_| {
                let px = (0..w * h)
                    .map(|i| {
                        let block = (i % w) / 4 + 3 * ((i / w) / 5);
                        let c = colors[block];
                        let n: i16 = rng.random_range(-6..=6);
                        c.map(|v| (v as i16 + n).clamp(0, 255) as u8)
                    })
                    .collect();
                RgbFrame::new(w, h, px).unwrap()
            })
            .collect();
        VideoVolume::new(frames).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn partition_and_connectivity(seed in 0u64..1000, k in 0.0f64..2000.0) {
            let v = block_video(seed);
            let s = segment_video(&v, &[], &params(k, 2)).unwrap();
            let table = region_index(&s);
            let total: usize = table.regions.iter().map(|r| r.pixel_count).sum();
            prop_assert_eq!(total, 12 * 10 * 3);
            prop_assert_eq!(component_count(&s), s.region_count());
            // temporal persistence
            for r in &table.regions {
                let frames: Vec<usize> = r.pixels.keys().copied().collect();
                prop_assert_eq!(frames.last().unwrap() - frames[0] + 1, frames.len());
            }
        }

        #[test]
        fn deterministic(seed in 0u64..1000) {
            let v = block_video(seed);
            let a = segment_video(&v, &[], &params(200.0, 2)).unwrap();
            let b = segment_video(&v, &[], &params(200.0, 2)).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn larger_threshold_never_adds_regions(seed in 0u64..1000) {
            let v = block_video(seed);
            let mut last = usize::MAX;
            for k in [0.0, 50.0, 200.0, 800.0, 5000.0, 1e6] {
                let c = segment_video(&v, &[], &params(k, 2)).unwrap().region_count();
                prop_assert!(c <= last, "k={} gave {} regions after {}", k, c, last);
                last = c;
            }
        }
    }
}
