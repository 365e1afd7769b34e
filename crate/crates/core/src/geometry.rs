//! Pinhole camera rays, plane parametrization and depth rendering.
//!
//! A plane is stored as `alpha` such that a point at distance `d` along a
//! unit viewing ray `r` lies on the plane iff `r · alpha = 1 / d`. All rays
//! are unit length, so depths are Euclidean distances along the ray (the
//! same quantity a range sensor measures), not z-depth.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Far clamp for rendered and measured depth, in meters.
pub const MAX_DEPTH: f64 = 80.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fu: f64,
    pub fv: f64,
    pub uo: f64,
    pub vo: f64,
}

impl CameraIntrinsics {
    pub fn new(fu: f64, fv: f64, uo: f64, vo: f64) -> Result<Self> {
        let k = CameraIntrinsics { fu, fv, uo, vo };
        k.validate()?;
        Ok(k)
    }

    /// Fallback intrinsics for footage without calibration: focal length
    /// equal to the larger image side, principal point at the image center.
    pub fn default_for(width: usize, height: usize) -> Self {
        let f = width.max(height) as f64;
        CameraIntrinsics {
            fu: f,
            fv: f,
            uo: (width as f64 - 1.0) / 2.0,
            vo: (height as f64 - 1.0) / 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fu > 0.0 && self.fv > 0.0 && self.fu.is_finite() && self.fv.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "focal lengths must be positive and finite, got ({}, {})",
                self.fu, self.fv
            )));
        }
        if !(self.uo.is_finite() && self.vo.is_finite()) {
            return Err(Error::InvalidParameter("principal point must be finite".into()));
        }
        Ok(())
    }

    /// Project a camera-frame point. Returns `None` for points with `z <= 0`.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fu * p.x / p.z + self.uo, self.fv * p.y / p.z + self.vo))
    }
}

/// Unit viewing ray through a pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray(Vector3<f64>);

impl Ray {
    /// Normalizes `v`. Returns `None` for a zero or non-finite vector.
    pub fn from_vector(v: Vector3<f64>) -> Option<Self> {
        let n = v.norm();
        if n > 0.0 && n.is_finite() {
            Some(Ray(v / n))
        } else {
            None
        }
    }

    pub fn dir(&self) -> &Vector3<f64> {
        &self.0
    }

    pub fn dot(&self, plane: &PlaneParams) -> f64 {
        self.0.dot(&plane.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneParams(pub Vector3<f64>);

impl PlaneParams {
    pub fn new(a1: f64, a2: f64, a3: f64) -> Self {
        PlaneParams(Vector3::new(a1, a2, a3))
    }

    /// Plane with unit normal `normal` at perpendicular distance `dist` from
    /// the camera center.
    pub fn from_normal_distance(normal: Vector3<f64>, dist: f64) -> Self {
        PlaneParams(normal.normalize() / dist)
    }

    /// Unit plane normal, `alpha / |alpha|`.
    pub fn orientation(&self) -> Option<Vector3<f64>> {
        let n = self.0.norm();
        (n > 0.0).then(|| self.0 / n)
    }

    pub fn as_vector(&self) -> &Vector3<f64> {
        &self.0
    }
}

pub fn pixel_ray(k: &CameraIntrinsics, u: f64, v: f64) -> Ray {
    let raw = Vector3::new((u - k.uo) / k.fu, (v - k.vo) / k.fv, 1.0);
    // z is 1, so the norm is at least 1
    Ray(raw / raw.norm())
}

pub fn plane_depth(r: &Ray, p: &PlaneParams) -> Result<f64> {
    let s = r.dot(p);
    if s > 0.0 {
        Ok(1.0 / s)
    } else {
        Err(Error::BehindCamera(s))
    }
}

/// Least-squares plane through `(ray, depth)` samples, minimizing
/// `sum (r · alpha - 1/d)^2`.
pub fn fit_plane(rays: &[Ray], depths: &[f64]) -> Result<PlaneParams> {
    if rays.len() != depths.len() {
        return Err(Error::dims(rays.len(), depths.len()));
    }
    if rays.len() < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "need at least 3 rays, got {}",
            rays.len()
        )));
    }
    if let Some(d) = depths.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
        return Err(Error::InvalidParameter(format!("depth must be positive, got {d}")));
    }
    let n = rays.len();
    let a = DMatrix::from_fn(n, 3, |i, j| rays[i].0[j]);
    let b = DVector::from_iterator(n, depths.iter().map(|d| 1.0 / d));
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin <= smax * 1e-10 {
        return Err(Error::DegenerateGeometry(format!(
            "ray matrix is rank deficient (singular values {smax:e} .. {smin:e})"
        )));
    }
    let x = svd
        .solve(&b, 0.0)
        .map_err(|e| Error::DegenerateGeometry(e.to_string()))?;
    Ok(PlaneParams::new(x[0], x[1], x[2]))
}

/// Dense per-pixel depth with a validity mask. Invalid pixels hold 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DepthMap {
    pub fn new_invalid(width: usize, height: usize) -> Self {
        DepthMap {
            width,
            height,
            values: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, depth: f64) -> Self {
        DepthMap {
            width,
            height,
            values: vec![depth; width * height],
            valid: vec![true; width * height],
        }
    }

    /// Builds a map from raw values, treating non-positive or non-finite
    /// entries as invalid.
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::dims(width * height, values.len()));
        }
        let mut map = DepthMap::new_invalid(width, height);
        for (i, v) in values.into_iter().enumerate() {
            map.set(i, v);
        }
        Ok(map)
    }

    pub fn set(&mut self, idx: usize, depth: f64) {
        if depth > 0.0 && depth.is_finite() {
            self.values[idx] = depth;
            self.valid[idx] = true;
        } else {
            self.values[idx] = 0.0;
            self.valid[idx] = false;
        }
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.valid[i].then(|| self.values[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Depth of one pixel under the far-clamp convention: rays that miss the
/// plane or exceed [`MAX_DEPTH`] render at [`MAX_DEPTH`].
pub fn clamped_depth(r: &Ray, p: &PlaneParams) -> f64 {
    match plane_depth(r, p) {
        Ok(d) if d <= MAX_DEPTH => d,
        _ => MAX_DEPTH,
    }
}

pub fn render_depth(
    width: usize,
    height: usize,
    labels: &[u32],
    planes: &BTreeMap<u32, PlaneParams>,
    k: &CameraIntrinsics,
) -> Result<DepthMap> {
    if labels.len() != width * height {
        return Err(Error::dims(width * height, labels.len()));
    }
    let mut out = DepthMap::new_invalid(width, height);
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            let plane = planes.get(&labels[i]).ok_or_else(|| {
                Error::InconsistentInput(format!("region {} has no plane", labels[i]))
            })?;
            let r = pixel_ray(k, x as f64, y as f64);
            out.set(i, clamped_depth(&r, plane));
        }
    }
    Ok(out)
}
