//! Piecewise-planar depth field.
//!
//! Each region slice gets a plane `alpha`. The energy is
//!
//! ```text
//! E = Σ_i Σ_k (d̂_ik r_ikᵀα_i − 1)²
//!   + λ_conn Σ_(i,j) y_ij / |B_ij| Σ_(p∈B_ij) ((r_pᵀα_i − r_pᵀα_j) √(d̂_i d̂_j))²
//!   + λ_cop  Σ_(i,j) y_ij ((r_qjᵀα_i − r_qjᵀα_j) d̂_j)²   [+ the i ↔ j mirror]
//! ```
//!
//! with unary depths `d̂`, region-mean unary depths `d̂_i`, boundary pixels
//! `B_ij` and region center rays `r_q`. It is quadratic in the planes and is
//! minimized with L-BFGS preconditioned by the per-region data Hessians.

pub mod lbfgs;

use std::collections::BTreeMap;

use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{fit_plane, pixel_ray, render_depth, CameraIntrinsics, DepthMap, PlaneParams, Ray};
use crate::occlusion::{extract_edgelets, median};
use crate::segmentation::SegmentationLabelMap;

pub use lbfgs::{LbfgsConfig, LbfgsResult, StopReason};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MrfConfig {
    pub lambda_conn: f64,
    pub lambda_cop: f64,
    /// Apply the co-planarity term at both regions' centers.
    pub symmetric_coplanarity: bool,
    /// Unary samples per region slice; 0 keeps every pixel.
    pub max_samples: usize,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub lbfgs_memory: usize,
    /// Gate used for adjacent pairs without an occlusion estimate.
    pub default_gate: f64,
}

impl Default for MrfConfig {
    fn default() -> Self {
        MrfConfig {
            lambda_conn: 1.0,
            lambda_cop: 0.5,
            symmetric_coplanarity: true,
            max_samples: 200,
            max_iter: 500,
            grad_tol: 1e-8,
            lbfgs_memory: 10,
            default_gate: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionSamples {
    pub rays: Vec<Ray>,
    /// Unary depths along `rays`, meters.
    pub depths: Vec<f64>,
    pub center: Ray,
}

impl RegionSamples {
    pub fn mean_depth(&self) -> f64 {
        self.depths.iter().sum::<f64>() / self.depths.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairTerm {
    pub i: usize,
    pub j: usize,
    pub boundary: Vec<Ray>,
    /// Probability that the boundary is not an occlusion.
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MrfProblem {
    regions: Vec<RegionSamples>,
    pairs: Vec<PairTerm>,
    mean_depth: Vec<f64>,
    pub lambda_conn: f64,
    pub lambda_cop: f64,
    pub symmetric_coplanarity: bool,
}

impl MrfProblem {
    pub fn new(regions: Vec<RegionSamples>, pairs: Vec<PairTerm>, config: &MrfConfig) -> Result<Self> {
        if regions.is_empty() {
            return Err(Error::EmptyInput("problem has no regions"));
        }
        for (n, r) in regions.iter().enumerate() {
            if r.rays.is_empty() || r.rays.len() != r.depths.len() {
                return Err(Error::InconsistentInput(format!("region {n} needs matching, non-empty rays and depths")));
            }
            if r.depths.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
                return Err(Error::InconsistentInput(format!("region {n} has a non-positive unary depth")));
            }
        }
        for p in &pairs {
            if p.i >= regions.len() || p.j >= regions.len() || p.i == p.j {
                return Err(Error::InconsistentInput(format!("pair ({}, {}) references a missing region", p.i, p.j)));
            }
            if !(0.0..=1.0).contains(&p.y) {
                return Err(Error::InconsistentInput(format!("gate {} outside [0,1]", p.y)));
            }
            if p.boundary.is_empty() {
                return Err(Error::InconsistentInput(format!("pair ({}, {}) has no boundary", p.i, p.j)));
            }
        }
        let mean_depth = regions.iter().map(RegionSamples::mean_depth).collect();
        Ok(MrfProblem {
            regions,
            pairs,
            mean_depth,
            lambda_conn: config.lambda_conn,
            lambda_cop: config.lambda_cop,
            symmetric_coplanarity: config.symmetric_coplanarity,
        })
    }

    pub fn regions(&self) -> &[RegionSamples] {
        &self.regions
    }

    pub fn pairs(&self) -> &[PairTerm] {
        &self.pairs
    }

    pub fn pairs_mut(&mut self) -> &mut [PairTerm] {
        &mut self.pairs
    }

    pub fn mean_depth(&self, i: usize) -> f64 {
        self.mean_depth[i]
    }

    /// Pack planes into the solver's flat layout.
    pub fn pack(planes: &[PlaneParams]) -> DVector<f64> {
        DVector::from_iterator(planes.len() * 3, planes.iter().flat_map(|p| p.0.iter().copied()))
    }

    pub fn unpack(x: &DVector<f64>) -> Vec<PlaneParams> {
        x.as_slice().chunks(3).map(|c| PlaneParams::new(c[0], c[1], c[2])).collect()
    }
}

/// Fractional depth error `d̂ · rᵀα − 1` of one unary sample.
pub fn fractional_error(d_hat: f64, r: &Ray, a: &PlaneParams) -> f64 {
    d_hat * r.dot(a) - 1.0
}

pub fn data_energy(s: &RegionSamples, a: &PlaneParams) -> f64 {
    s.rays.iter().zip(&s.depths).map(|(r, d)| fractional_error(*d, r, a).powi(2)).sum()
}

pub fn connectivity_energy(p: &PairTerm, d_i: f64, d_j: f64, a_i: &PlaneParams, a_j: &PlaneParams) -> f64 {
    let diff = a_i.0 - a_j.0;
    let scale = d_i * d_j;
    p.y * p.boundary.iter().map(|r| r.dir().dot(&diff).powi(2) * scale).sum::<f64>() / p.boundary.len() as f64
}

/// One direction: evaluated at the center ray of region `j`, scaled by `d̂_j`.
pub fn coplanarity_energy(y: f64, center_j: &Ray, d_j: f64, a_i: &PlaneParams, a_j: &PlaneParams) -> f64 {
    y * (center_j.dir().dot(&(a_i.0 - a_j.0)) * d_j).powi(2)
}

/// Total energy, with the gradient written to `grad` when given.
pub fn total_energy(problem: &MrfProblem, planes: &[PlaneParams], mut grad: Option<&mut [Vector3<f64>]>) -> f64 {
    assert_eq!(planes.len(), problem.regions.len(), "one plane per region");
    if let Some(g) = grad.as_deref_mut() {
        g.iter_mut().for_each(|v| *v = Vector3::zeros());
    }
    let mut e = 0.0;
    for (i, s) in problem.regions.iter().enumerate() {
        let a = &planes[i];
        let mut gi = Vector3::zeros();
        for (r, d) in s.rays.iter().zip(&s.depths) {
            let f = fractional_error(*d, r, a);
            e += f * f;
            gi += (2.0 * f * d) * r.dir();
        }
        if let Some(g) = grad.as_deref_mut() {
            g[i] += gi;
        }
    }
    for p in &problem.pairs {
        if p.y == 0.0 {
            continue;
        }
        let (ai, aj) = (&planes[p.i], &planes[p.j]);
        let diff = ai.0 - aj.0;
        let (di, dj) = (problem.mean_depth[p.i], problem.mean_depth[p.j]);
        // connectivity
        let c = problem.lambda_conn * p.y * di * dj / p.boundary.len() as f64;
        let mut gc = Vector3::zeros();
        for r in &p.boundary {
            let t = r.dir().dot(&diff);
            e += c * t * t;
            gc += (2.0 * c * t) * r.dir();
        }
        // co-planarity at j's center, and at i's center when symmetric
        let mut cop = |center: &Ray, d: f64| {
            let k = problem.lambda_cop * p.y * d * d;
            let t = center.dir().dot(&diff);
            e += k * t * t;
            gc += (2.0 * k * t) * center.dir();
        };
        cop(&problem.regions[p.j].center, dj);
        if problem.symmetric_coplanarity {
            cop(&problem.regions[p.i].center, di);
        }
        if let Some(g) = grad.as_deref_mut() {
            g[p.i] += gc;
            g[p.j] -= gc;
        }
    }
    e
}

#[derive(Debug, Clone, PartialEq)]
pub struct MrfSolution {
    pub planes: Vec<PlaneParams>,
    pub energy: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stop: StopReason,
    pub history: Vec<f64>,
}

/// Independent least-squares planes against each region's unaries, falling
/// back to a fronto-parallel plane through the mean depth along the mean
/// ray when the samples do not span three dimensions.
pub fn independent_fits(problem: &MrfProblem) -> Vec<PlaneParams> {
    problem
        .regions
        .iter()
        .map(|s| {
            fit_plane(&s.rays, &s.depths).unwrap_or_else(|_| {
                let mean: Vector3<f64> = s.rays.iter().map(|r| *r.dir()).sum::<Vector3<f64>>() / s.rays.len() as f64;
                let r = Ray::from_vector(mean).unwrap_or(s.center);
                PlaneParams(r.dir() / s.mean_depth())
            })
        })
        .collect()
}

pub fn solve(problem: &MrfProblem, init: Option<Vec<PlaneParams>>, config: &MrfConfig) -> Result<MrfSolution> {
    let init = init.unwrap_or_else(|| independent_fits(problem));
    if init.len() != problem.regions.len() {
        return Err(Error::dims(problem.regions.len(), init.len()));
    }
    let e0 = total_energy(problem, &init, None);
    if !e0.is_finite() {
        return Err(Error::NonFinite("initial energy"));
    }
    // Block-diagonal preconditioner from each region's data Hessian.
    let blocks: Vec<Matrix3<f64>> = problem
        .regions
        .iter()
        .map(|s| {
            let mut h = Matrix3::zeros();
            for (r, d) in s.rays.iter().zip(&s.depths) {
                h += 2.0 * d * d * r.dir() * r.dir().transpose();
            }
            let ridge = 1e-9 * h.trace().max(1e-12);
            (h + Matrix3::identity() * ridge)
                .try_inverse()
                .unwrap_or_else(Matrix3::identity)
        })
        .collect();
    let precond = |q: &DVector<f64>| {
        let mut out = DVector::zeros(q.len());
        for (i, b) in blocks.iter().enumerate() {
            let v = b * Vector3::new(q[3 * i], q[3 * i + 1], q[3 * i + 2]);
            out.fixed_rows_mut::<3>(3 * i).copy_from(&v);
        }
        out
    };
    let mut gbuf = vec![Vector3::zeros(); problem.regions.len()];
    let f = |x: &DVector<f64>, g: &mut DVector<f64>| {
        let planes = MrfProblem::unpack(x);
        let e = total_energy(problem, &planes, Some(&mut gbuf));
        for (i, v) in gbuf.iter().enumerate() {
            g.fixed_rows_mut::<3>(3 * i).copy_from(v);
        }
        e
    };
    let r = lbfgs::minimize(
        MrfProblem::pack(&init),
        f,
        precond,
        &LbfgsConfig {
            max_iter: config.max_iter,
            grad_tol: config.grad_tol,
            memory: config.lbfgs_memory,
        },
    );
    Ok(MrfSolution {
        planes: MrfProblem::unpack(&r.x),
        energy: r.energy,
        iterations: r.iterations,
        converged: r.converged,
        stop: r.stop,
        history: r.history,
    })
}

/// `m` evenly spaced picks from `0..n`.
fn subsample(n: usize, m: usize) -> Vec<usize> {
    if m == 0 || n <= m {
        return (0..n).collect();
    }
    (0..m).map(|k| ((2 * k + 1) * n) / (2 * m)).collect()
}

/// MRF for one frame of a label map.
///
/// `unary` holds per-pixel unary depths; `gates` maps `(i, j)` with `i < j`
/// to the non-occlusion probability. Returns the problem and the region id
/// of each problem index.
pub fn frame_problem(
    labels: &SegmentationLabelMap,
    frame: usize,
    k: &CameraIntrinsics,
    unary: &DepthMap,
    gates: &BTreeMap<(u32, u32), f64>,
    config: &MrfConfig,
) -> Result<(MrfProblem, Vec<u32>)> {
    let (w, h) = (labels.width(), labels.height());
    if unary.width != w || unary.height != h {
        return Err(Error::dims(format!("{w}x{h}"), format!("{}x{}", unary.width, unary.height)));
    }
    let l = labels.frame(frame);
    let mut members: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &r) in l.iter().enumerate() {
        members.entry(r).or_default().push(i);
    }
    let ids: Vec<u32> = members.keys().copied().collect();
    let slot: BTreeMap<u32, usize> = ids.iter().enumerate().map(|(n, &r)| (r, n)).collect();
    let ray = |p: usize| pixel_ray(k, (p % w) as f64, (p / w) as f64);
    let regions = members
        .iter()
        .map(|(&r, px)| {
            let valid: Vec<usize> = px.iter().copied().filter(|&p| unary.valid[p]).collect();
            if valid.is_empty() {
                return Err(Error::InconsistentInput(format!("region {r} in frame {frame} has no valid unary depth")));
            }
            let picks = subsample(valid.len(), config.max_samples);
            let (cx, cy) = px.iter().fold((0.0, 0.0), |(sx, sy), &p| (sx + (p % w) as f64, sy + (p / w) as f64));
            let n = px.len() as f64;
            Ok(RegionSamples {
                rays: picks.iter().map(|&q| ray(valid[q])).collect(),
                depths: picks.iter().map(|&q| unary.values[valid[q]]).collect(),
                center: pixel_ray(k, cx / n, cy / n),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let pairs = extract_edgelets(labels, frame)
        .into_iter()
        .map(|e| PairTerm {
            i: slot[&e.i],
            j: slot[&e.j],
            boundary: e.boundary.iter().map(|&p| ray(p)).collect(),
            y: gates.get(&(e.i, e.j)).copied().unwrap_or(config.default_gate),
        })
        .collect();
    Ok((MrfProblem::new(regions, pairs, config)?, ids))
}

/// Planes keyed by `(region, frame)`.
pub type PlaneTrack = BTreeMap<(u32, usize), PlaneParams>;

/// Replace each plane by the component-wise median over the region's planes
/// in the centered window of frames.
pub fn temporal_plane_smooth(planes: &PlaneTrack, window: usize) -> PlaneTrack {
    let mut by_region: BTreeMap<u32, Vec<(usize, PlaneParams)>> = BTreeMap::new();
    for (&(r, t), p) in planes {
        by_region.entry(r).or_default().push((t, *p));
    }
    let mut out = PlaneTrack::new();
    for (r, track) in by_region {
        for &(t, _) in &track {
            let win = crate::dataset::lidar::centered_window(t, window, usize::MAX);
            let inside: Vec<&PlaneParams> = track.iter().filter(|(s, _)| win.contains(s)).map(|(_, p)| p).collect();
            let comp = |c: usize| median(&mut inside.iter().map(|p| p.0[c]).collect::<Vec<_>>());
            out.insert((r, t), PlaneParams::new(comp(0), comp(1), comp(2)));
        }
    }
    out
}

/// Render every frame from per-slice planes.
pub fn render_sequence(labels: &SegmentationLabelMap, planes: &PlaneTrack, k: &CameraIntrinsics) -> Result<Vec<DepthMap>> {
    (0..labels.frame_count())
        .map(|t| {
            let frame_planes: BTreeMap<u32, PlaneParams> =
                planes.iter().filter(|((_, s), _)| *s == t).map(|(&(r, _), p)| (r, *p)).collect();
            render_depth(labels.width(), labels.height(), labels.frame(t), &frame_planes, k)
        })
        .collect()
}

/// Smooth planes over time, then re-render.
pub fn temporal_depth_smooth(
    planes: &PlaneTrack,
    labels: &SegmentationLabelMap,
    k: &CameraIntrinsics,
    window: usize,
) -> Result<(PlaneTrack, Vec<DepthMap>)> {
    let smoothed = temporal_plane_smooth(planes, window);
    let maps = render_sequence(labels, &smoothed, k)?;
    Ok((smoothed, maps))
}

/// Solve every frame independently (in parallel) and collect the planes.
pub fn solve_video(
    labels: &SegmentationLabelMap,
    k: &CameraIntrinsics,
    unary: &[DepthMap],
    gates: &BTreeMap<(usize, u32, u32), f64>,
    config: &MrfConfig,
) -> Result<(PlaneTrack, Vec<MrfSolution>)> {
    use rayon::prelude::*;
    if unary.len() != labels.frame_count() {
        return Err(Error::dims(labels.frame_count(), unary.len()));
    }
    let per_frame: Vec<(Vec<u32>, MrfSolution)> = (0..labels.frame_count())
        .into_par_iter()
        .map(|t| {
            let g: BTreeMap<(u32, u32), f64> =
                gates.range((t, 0, 0)..=(t, u32::MAX, u32::MAX)).map(|(&(_, i, j), &y)| ((i, j), y)).collect();
            let (problem, ids) = frame_problem(labels, t, k, &unary[t], &g, config)?;
            Ok((ids, solve(&problem, None, config)?))
        })
        .collect::<Result<_>>()?;
    let mut planes = PlaneTrack::new();
    let mut sols = Vec::with_capacity(per_frame.len());
    for (t, (ids, sol)) in per_frame.into_iter().enumerate() {
        for (r, p) in ids.iter().zip(&sol.planes) {
            planes.insert((*r, t), *p);
        }
        sols.push(sol);
    }
    Ok((planes, sols))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn z() -> Ray {
        Ray::from_vector(Vector3::new(0.0, 0.0, 1.0)).unwrap()
    }

    #[test]
    fn fractional_error_examples() {
        let a = PlaneParams::new(0.0, 0.0, 0.1);
        assert_eq!(fractional_error(10.0, &z(), &a), 0.0);
        assert!((fractional_error(20.0, &z(), &a) - 1.0).abs() < 1e-15);
        assert_eq!(fractional_error(7.0, &z(), &PlaneParams::new(0.0, 0.0, 0.0)), -1.0);
    }

    #[test]
    fn pair_term_examples() {
        let p = PairTerm {
            i: 0,
            j: 1,
            boundary: vec![z()],
            y: 1.0,
        };
        let (ai, aj) = (PlaneParams::new(0.0, 0.0, 0.2), PlaneParams::new(0.0, 0.0, 0.1));
        assert!((connectivity_energy(&p, 5.0, 10.0, &ai, &aj) - 0.5).abs() < 1e-12);
        assert!((coplanarity_energy(1.0, &z(), 10.0, &ai, &aj) - 1.0).abs() < 1e-12);
        assert!((coplanarity_energy(0.5, &z(), 10.0, &ai, &aj) - 0.5).abs() < 1e-12);
        assert_eq!(connectivity_energy(&PairTerm { y: 0.0, ..p.clone() }, 5.0, 10.0, &ai, &aj), 0.0);
        assert_eq!(connectivity_energy(&p, 5.0, 10.0, &ai, &ai), 0.0);
    }

    #[test]
    fn subsample_is_even() {
        assert_eq!(subsample(10, 5), vec![1, 3, 5, 7, 9]);
        assert_eq!(subsample(3, 5), vec![0, 1, 2]);
        assert_eq!(subsample(7, 0).len(), 7);
    }

    #[test]
    fn median_window_removes_spike() {
        let a = PlaneParams::new(0.0, 0.0, 0.1);
        let mut track = PlaneTrack::new();
        for t in 0..9 {
            track.insert((0, t), if t == 4 { PlaneParams::new(1.0, 1.0, 1.0) } else { a });
        }
        let s = temporal_plane_smooth(&track, 5);
        assert!(s.values().all(|p| *p == a));
        assert_eq!(temporal_plane_smooth(&track, 1), track);
    }
}
