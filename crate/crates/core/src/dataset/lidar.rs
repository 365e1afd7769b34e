//! Range-sensor ground truth.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthMap, MAX_DEPTH};
use crate::segmentation::SegmentationLabelMap;

#[derive(Debug, Clone, PartialEq)]
pub struct LidarScan {
    pub points: Vec<Vector3<f64>>,
    pub timestamp: f64,
}

impl LidarScan {
    /// Drops points farther than [`MAX_DEPTH`] from the sensor.
    pub fn new(points: Vec<Vector3<f64>>, timestamp: f64) -> Result<Self> {
        if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite("lidar point"));
        }
        let points = points.into_iter().filter(|p| p.norm() <= MAX_DEPTH).collect();
        Ok(LidarScan { points, timestamp })
    }
}

/// Sensor-to-camera rigid transform: `x_cam = R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extrinsics {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Extrinsics {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let off = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if off > 1e-9 || (rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter("rotation must be orthonormal with determinant 1".into()));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("translation"));
        }
        Ok(Extrinsics { rotation, translation })
    }

    pub fn identity() -> Self {
        Extrinsics {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Parse `rotation = [[..], [..], [..]]` (row-major) and
    /// `translation = [x, y, z]`.
    pub fn from_toml(text: &str) -> Result<Self> {
        #[derive(serde::Deserialize)]
        struct Raw {
            rotation: [[f64; 3]; 3],
            translation: [f64; 3],
        }
        let raw: Raw = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let r = raw.rotation;
        Self::new(Matrix3::from_fn(|i, j| r[i][j]), Vector3::from(raw.translation))
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Camera-frame point back to sensor coordinates.
    pub fn invert(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }
}

/// A projected point: subpixel position and distance from the camera center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarHit {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl LidarHit {
    /// Nearest pixel index, or `None` outside the frame.
    pub fn pixel(&self, width: usize, height: usize) -> Option<usize> {
        let (x, y) = (self.u.round(), self.v.round());
        (x >= 0.0 && y >= 0.0 && x < width as f64 && y < height as f64).then(|| y as usize * width + x as usize)
    }
}

/// Points in front of the camera that land inside a `width` x `height`
/// frame. Depth is the ray distance to the camera center.
pub fn project_lidar(scan: &LidarScan, extr: &Extrinsics, k: &CameraIntrinsics, width: usize, height: usize) -> Vec<LidarHit> {
    scan.points
        .iter()
        .filter_map(|p| {
            let c = extr.apply(p);
            let (u, v) = k.project(&c)?;
            let hit = LidarHit { u, v, depth: c.norm() };
            hit.pixel(width, height).map(|_| hit)
        })
        .collect()
}

/// Frames `[t - window/2, t + (window-1)/2]` clipped to `0..n`.
pub fn centered_window(t: usize, window: usize, n: usize) -> std::ops::Range<usize> {
    let window = window.max(1);
    let lo = t.saturating_sub(window / 2);
    let hi = (t + (window - 1) / 2 + 1).min(n);
    lo..hi
}

/// Per region slice, the mean depth of all hits that fall on the region in
/// the centered temporal window. Slices without hits are invalid.
pub fn segment_ground_truth(hits: &[Vec<LidarHit>], labels: &SegmentationLabelMap, window: usize) -> Result<Vec<DepthMap>> {
    let (w, h, n) = (labels.width(), labels.height(), labels.frame_count());
    if hits.len() != n {
        return Err(Error::dims(format!("{n} scans"), format!("{} scans", hits.len())));
    }
    let regions = labels.region_count();
    // Per-frame (sum, count) for every region.
    let per_frame: Vec<Vec<(f64, usize)>> = hits
        .iter()
        .enumerate()
        .map(|(t, hs)| {
            let mut acc = vec![(0.0, 0usize); regions];
            let frame = labels.frame(t);
            for hit in hs {
                if let Some(i) = hit.pixel(w, h) {
                    let a = &mut acc[frame[i] as usize];
                    a.0 += hit.depth;
                    a.1 += 1;
                }
            }
            acc
        })
        .collect();
    Ok((0..n)
        .map(|t| {
            let mut acc = vec![(0.0, 0usize); regions];
            for s in centered_window(t, window, n) {
                for (a, b) in acc.iter_mut().zip(&per_frame[s]) {
                    a.0 += b.0;
                    a.1 += b.1;
                }
            }
            let mut d = DepthMap::new_invalid(w, h);
            for (i, &l) in labels.frame(t).iter().enumerate() {
                let (sum, count) = acc[l as usize];
                if count > 0 {
                    d.set(i, sum / count as f64);
                }
            }
            d
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0).unwrap()
    }

    #[test]
    fn projection_examples() {
        let scan = LidarScan::new(
            vec![Vector3::new(0.0, 0.0, 10.0), Vector3::new(1.0, 0.0, 10.0), Vector3::new(0.0, 0.0, -5.0)],
            0.0,
        )
        .unwrap();
        let hits = project_lidar(&scan, &Extrinsics::identity(), &k(), 640, 480);
        assert_eq!(hits.len(), 2);
        assert_eq!(hits[0], LidarHit { u: 320.0, v: 240.0, depth: 10.0 });
        assert_eq!((hits[1].u, hits[1].v), (370.0, 240.0));
        assert!((hits[1].depth - 101f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn far_and_offscreen_points_dropped() {
        let scan = LidarScan::new(vec![Vector3::new(0.0, 0.0, 90.0), Vector3::new(30.0, 0.0, 10.0)], 0.0).unwrap();
        assert_eq!(scan.points.len(), 1);
        assert!(project_lidar(&scan, &Extrinsics::identity(), &k(), 640, 480).is_empty());
    }

    #[test]
    fn extrinsics_from_toml() {
        let e = Extrinsics::from_toml("rotation = [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]\ntranslation = [0.0, 0.0, 2.0]\n").unwrap();
        assert_eq!(e.apply(&Vector3::new(1.0, 0.0, 0.0)), Vector3::new(0.0, 1.0, 2.0));
        assert!(Extrinsics::from_toml("rotation = [[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]\ntranslation = [0.0, 0.0, 0.0]\n").is_err());
    }

    #[test]
    fn rejects_non_rotation() {
        assert!(Extrinsics::new(Matrix3::identity() * 2.0, Vector3::zeros()).is_err());
        let flip = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(Extrinsics::new(flip, Vector3::zeros()).is_err());
    }

    #[test]
    fn region_averages() {
        let labels = SegmentationLabelMap::new(2, 1, 1, vec![0, 1]).unwrap();
        let at = |u: f64, depth: f64| LidarHit { u, v: 0.0, depth };
        let hits = vec![vec![at(0.0, 5.0), at(0.0, 5.0), at(0.2, 20.0)]];
        let gt = segment_ground_truth(&hits, &labels, 5).unwrap();
        assert_eq!(gt[0].get(0, 0), Some(10.0));
        assert_eq!(gt[0].get(1, 0), None);
    }

    #[test]
    fn window_bounds() {
        assert_eq!(centered_window(0, 5, 10), 0..3);
        assert_eq!(centered_window(5, 5, 10), 3..8);
        assert_eq!(centered_window(20, 30, 40), 5..35);
        assert_eq!(centered_window(3, 1, 10), 3..4);
    }
}
