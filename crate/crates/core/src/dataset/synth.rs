//! Piecewise-planar synthetic scenes with exact depth, labels and
//! occlusion boundaries.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{GcClass, GeometricContextMap, GC_CLASSES};
use crate::geometry::{pixel_ray, plane_depth, render_depth, CameraIntrinsics, DepthMap, PlaneParams, MAX_DEPTH};
use crate::imaging::{RgbFrame, VideoVolume};
use crate::occlusion::{depth_gap_label, extract_edgelets};
use crate::segmentation::SegmentationLabelMap;

/// Pixel area covered by a region before it moves. Later regions paint over
/// earlier ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Full,
    /// Rows `>= row`.
    Below { row: f64 },
    /// Rows `< row`.
    Above { row: f64 },
    /// Half-open box `[x0, x1) x [y0, y1)`.
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Full => true,
            Shape::Below { row } => y >= row,
            Shape::Above { row } => y < row,
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x < x1 && y >= y0 && y < y1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRegion {
    pub plane: [f64; 3],
    pub shape: Shape,
    pub color: [u8; 3],
    pub class: GcClass,
    /// Image-space shift per frame of the shape and its texture, pixels.
    #[serde(default)]
    pub velocity: [f64; 2],
    /// Texture contrast, 0..255 units.
    #[serde(default = "default_contrast")]
    pub contrast: f64,
}

fn default_contrast() -> f64 {
    40.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub width: usize,
    pub height: usize,
    pub intrinsics: CameraIntrinsics,
    pub regions: Vec<SceneRegion>,
    #[serde(default)]
    pub seed: u64,
    /// Depth gap above which a boundary counts as occluding, meters.
    #[serde(default = "default_gap")]
    pub occlusion_gap: f64,
}

fn default_gap() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneOutput {
    pub video: VideoVolume,
    pub depths: Vec<DepthMap>,
    pub labels: SegmentationLabelMap,
    /// Plane per region id of `labels`.
    pub planes: BTreeMap<u32, PlaneParams>,
    pub classes: BTreeMap<u32, GcClass>,
    /// `true` when the boundary between `i < j` in a frame is occluding.
    pub occluding: BTreeMap<(usize, u32, u32), bool>,
    /// One-hot class confidences per frame.
    pub gc_maps: Vec<GeometricContextMap>,
}

impl SceneOutput {
    /// Non-occlusion gates (1 or 0) for every boundary.
    pub fn oracle_gates(&self) -> BTreeMap<(usize, u32, u32), f64> {
        self.occluding.iter().map(|(k, &o)| (*k, if o { 0.0 } else { 1.0 })).collect()
    }
}

fn hash(seed: u64, a: i64, b: i64, c: u64) -> f64 {
    // splitmix64 over the packed coordinates
    let mut z = seed
        ^ (a as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (b as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ c.wrapping_mul(0x1656_67B1_9E37_79F9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

/// Smooth value noise in [-1, 1] on a 3-pixel lattice plus a fine layer.
fn texture(seed: u64, region: u64, x: f64, y: f64) -> f64 {
    let cell = 3.0;
    let (gx, gy) = (x / cell, y / cell);
    let (x0, y0) = (gx.floor(), gy.floor());
    let (fx, fy) = (gx - x0, gy - y0);
    let (sx, sy) = (fx * fx * (3.0 - 2.0 * fx), fy * fy * (3.0 - 2.0 * fy));
    let at = |dx: i64, dy: i64| hash(seed, x0 as i64 + dx, y0 as i64 + dy, region);
    let top = at(0, 0) * (1.0 - sx) + at(1, 0) * sx;
    let bottom = at(0, 1) * (1.0 - sx) + at(1, 1) * sx;
    let coarse = top * (1.0 - sy) + bottom * sy;
    let fine = hash(seed ^ 0xABCD, x.floor() as i64, y.floor() as i64, region);
    0.75 * coarse + 0.25 * fine
}

/// Render a scene. Region ids in the output follow first appearance.
pub fn generate_scene(spec: &SyntheticScene, frames: usize) -> Result<SceneOutput> {
    let (w, h) = (spec.width, spec.height);
    if w == 0 || h == 0 || frames == 0 {
        return Err(Error::EmptyInput("scene needs a positive size and frame count"));
    }
    if spec.regions.is_empty() {
        return Err(Error::EmptyInput("scene has no regions"));
    }
    spec.intrinsics.validate()?;
    let mut raw = Vec::with_capacity(w * h * frames);
    let mut frame_imgs = Vec::with_capacity(frames);
    for t in 0..frames {
        let mut pixels = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let (xf, yf) = (x as f64, y as f64);
                let owner = spec.regions.iter().enumerate().rev().find(|(_, r)| {
                    let (dx, dy) = (r.velocity[0] * t as f64, r.velocity[1] * t as f64);
                    r.shape.contains(xf - dx, yf - dy)
                });
                let Some((n, r)) = owner else {
                    return Err(Error::InvalidParameter(format!(
                        "layout leaves pixel ({x}, {y}) uncovered in frame {t}"
                    )));
                };
                let ray = pixel_ray(&spec.intrinsics, xf, yf);
                let alpha = PlaneParams::new(r.plane[0], r.plane[1], r.plane[2]);
                if plane_depth(&ray, &alpha).is_err() {
                    return Err(Error::InvalidParameter(format!(
                        "region {n} plane is behind the camera at pixel ({x}, {y})"
                    )));
                }
                raw.push(n as u32);
                let (tx, ty) = (xf - r.velocity[0] * t as f64, yf - r.velocity[1] * t as f64);
                let v = r.contrast * texture(spec.seed, n as u64, tx, ty);
                pixels.push(r.color.map(|c| (c as f64 + v).round().clamp(0.0, 255.0) as u8));
            }
        }
        frame_imgs.push(RgbFrame::new(w, h, pixels)?);
    }
    let labels = SegmentationLabelMap::new(w, h, frames, raw.clone())?;
    let mut id_of: BTreeMap<u32, u32> = BTreeMap::new();
    for (r, l) in raw.iter().zip(labels.labels()) {
        id_of.entry(*r).or_insert(*l);
    }
    let planes: BTreeMap<u32, PlaneParams> = id_of
        .iter()
        .map(|(&r, &l)| {
            let p = spec.regions[r as usize].plane;
            (l, PlaneParams::new(p[0], p[1], p[2]))
        })
        .collect();
    let classes: BTreeMap<u32, GcClass> = id_of.iter().map(|(&r, &l)| (l, spec.regions[r as usize].class)).collect();
    let depths = (0..frames)
        .map(|t| render_depth(w, h, labels.frame(t), &planes, &spec.intrinsics))
        .collect::<Result<Vec<_>>>()?;
    let mut occluding = BTreeMap::new();
    for t in 0..frames {
        for e in extract_edgelets(&labels, t) {
            let occ = depth_gap_label(&e, &labels, &depths[t], spec.occlusion_gap).unwrap_or(true);
            occluding.insert((t, e.i, e.j), occ);
        }
    }
    let gc_maps = (0..frames)
        .map(|t| GeometricContextMap {
            width: w,
            height: h,
            conf: labels.frame(t).iter().map(|l| classes[l].one_hot()).collect(),
        })
        .collect();
    Ok(SceneOutput {
        video: VideoVolume::new(frame_imgs)?,
        depths,
        labels,
        planes,
        classes,
        occluding,
        gc_maps,
    })
}

/// Plane facing the camera with normal tilted by small random angles,
/// passing through `depth` meters along the optical axis.
fn tilted_plane(rng: &mut impl Rng, depth: f64, max_tilt: f64) -> [f64; 3] {
    let n = Vector3::new(rng.random_range(-max_tilt..max_tilt), rng.random_range(-max_tilt..max_tilt), 1.0).normalize();
    // point (0,0,depth) on the plane: n·p = dist
    let a = n / (n.z * depth);
    [a.x, a.y, a.z]
}

fn random_color(rng: &mut impl Rng) -> [u8; 3] {
    [rng.random_range(50..=205), rng.random_range(50..=205), rng.random_range(50..=205)]
}

/// Random layered scene of `n_regions` regions, every distinct surface
/// separated from the others by several meters, some surfaces split into two
/// coplanar regions. Boundaries between different planes are therefore
/// occluding and coplanar splits are not.
pub fn random_layered_scene(seed: u64, n_regions: usize, width: usize, height: usize) -> SyntheticScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = CameraIntrinsics::default_for(width, height);
    let n_regions = n_regions.max(1);
    let far = rng.random_range(55.0..60.0);
    let mut regions = vec![SceneRegion {
        plane: tilted_plane(&mut rng, far, 0.05),
        shape: Shape::Full,
        color: random_color(&mut rng),
        class: GcClass::Solid,
        velocity: [0.0; 2],
        contrast: 40.0,
    }];
    let mut depth: f64 = 51.0;
    while regions.len() < n_regions {
        depth -= rng.random_range(5.0..6.0);
        let plane = tilted_plane(&mut rng, depth.max(3.0), 0.05);
        let rw = rng.random_range(0.25..0.5) * width as f64;
        let rh = rng.random_range(0.25..0.5) * height as f64;
        let x0 = rng.random_range(0.0..width as f64 - rw);
        let y0 = rng.random_range(0.0..height as f64 - rh);
        let velocity = [rng.random_range(-0.6..0.6), rng.random_range(-0.3..0.3)];
        let class = if rng.random_bool(0.5) { GcClass::Solid } else { GcClass::Movable };
        let split = regions.len() + 2 <= n_regions && rng.random_bool(0.4);
        let mut push = |shape: Shape, color| {
            regions.push(SceneRegion {
                plane,
                shape,
                color,
                class,
                velocity,
                contrast: 40.0,
            })
        };
        if split {
            let xm = (x0 + rw / 2.0).floor();
            push(Shape::Rect { x0, y0, x1: xm, y1: y0 + rh }, random_color(&mut rng));
            push(Shape::Rect { x0: xm, y0, x1: x0 + rw, y1: y0 + rh }, random_color(&mut rng));
        } else {
            push(Shape::Rect { x0, y0, x1: x0 + rw, y1: y0 + rh }, random_color(&mut rng));
        }
    }
    SyntheticScene {
        width,
        height,
        intrinsics: k,
        regions,
        seed,
        occlusion_gap: 2.0,
    }
}

/// Outdoor-like scene where depth follows the layout class: sky at the top,
/// a ground plane below the horizon, and walls, vegetation and movable
/// objects at class-typical depths. The camera pans sideways, so image
/// motion falls off with depth.
pub fn random_street_scene(seed: u64, width: usize, height: usize) -> SyntheticScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = CameraIntrinsics::default_for(width, height);
    let horizon = k.vo;
    let cam_height = rng.random_range(1.2..2.0);
    // motion in pixels per frame at one meter
    let pan = rng.random_range(10.0..14.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let mut regions = vec![
        SceneRegion {
            plane: [0.0, 0.0, 1.0 / 200.0],
            shape: Shape::Full,
            color: random_color(&mut rng),
            class: GcClass::Sky,
            velocity: [0.0; 2],
            contrast: 6.0,
        },
        SceneRegion {
            // y-down camera: the ground is the plane y = cam_height
            plane: [0.0, 1.0 / cam_height, 0.0],
            shape: Shape::Below { row: horizon + 1.0 },
            color: random_color(&mut rng),
            class: GcClass::Ground,
            velocity: [0.0; 2],
            contrast: 30.0,
        },
    ];
    let n_objects = rng.random_range(2..=4);
    for _ in 0..n_objects {
        let class = [GcClass::Solid, GcClass::Porous, GcClass::Movable][rng.random_range(0..3)];
        let depth: f64 = match class {
            GcClass::Solid => rng.random_range(18.0..35.0),
            GcClass::Porous => rng.random_range(9.0..16.0),
            _ => rng.random_range(4.0..8.0),
        };
        // stand on the ground: bottom edge at the ground row for this depth
        let bottom = (horizon + k.fv * cam_height / depth).min(height as f64);
        let obj_h = match class {
            GcClass::Solid => 6.0,
            GcClass::Porous => 4.0,
            _ => 1.6,
        };
        let top = (bottom - k.fv * obj_h / depth).max(0.0);
        let wpx = rng.random_range(0.15..0.35) * width as f64;
        let x0 = rng.random_range(0.0..(width as f64 - wpx).max(1.0));
        let speed = pan / depth + if class == GcClass::Movable { rng.random_range(-0.5..0.5) } else { 0.0 };
        regions.push(SceneRegion {
            plane: [0.0, 0.0, 1.0 / depth],
            shape: Shape::Rect {
                x0,
                y0: top,
                x1: x0 + wpx,
                y1: bottom,
            },
            color: random_color(&mut rng),
            class,
            velocity: [speed, 0.0],
            contrast: if class == GcClass::Porous { 60.0 } else { 35.0 },
        });
    }
    // nearer objects paint last
    regions[2..].sort_by(|a, b| a.plane[2].total_cmp(&b.plane[2]));
    SyntheticScene {
        width,
        height,
        intrinsics: k,
        regions,
        seed,
        occlusion_gap: 2.0,
    }
}

/// Soften one-hot class maps: the true class keeps `keep`, the rest share
/// the remainder, with per-pixel jitter.
pub fn noisy_gc_maps(maps: &[GeometricContextMap], keep: f32, seed: u64) -> Vec<GeometricContextMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    maps.iter()
        .map(|m| GeometricContextMap {
            width: m.width,
            height: m.height,
            conf: m
                .conf
                .iter()
                .map(|c| {
                    let k = (keep + rng.random_range(-0.1f32..0.1)).clamp(0.0, 1.0);
                    let rest = (1.0 - k) / (GC_CLASSES - 1) as f32;
                    c.map(|v| if v > 0.5 { k } else { rest })
                })
                .collect(),
        })
        .collect()
}

/// Range-sensor style samples of frame `t`: `n` rays through uniformly
/// random subpixel positions, intersected with the plane of the pixel they
/// fall in. Points are in camera coordinates; far hits are dropped.
pub fn sample_point_cloud(out: &SceneOutput, k: &CameraIntrinsics, t: usize, n: usize, seed: u64) -> Vec<Vector3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (out.labels.width(), out.labels.height());
    let l = out.labels.frame(t);
    (0..n)
        .filter_map(|_| {
            let u = rng.random_range(-0.5..w as f64 - 0.5);
            let v = rng.random_range(-0.5..h as f64 - 0.5);
            let p = (v.round() as usize).min(h - 1) * w + (u.round() as usize).min(w - 1);
            let ray = pixel_ray(k, u, v);
            let d = plane_depth(&ray, &out.planes[&l[p]]).ok()?;
            (d <= MAX_DEPTH).then(|| ray.dir() * d)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::default_for(32, 24)
    }

    fn region(plane: [f64; 3], shape: Shape) -> SceneRegion {
        SceneRegion {
            plane,
            shape,
            color: [100, 120, 140],
            class: GcClass::Solid,
            velocity: [0.0; 2],
            contrast: 20.0,
        }
    }

    #[test]
    fn single_frontal_plane() {
        let spec = SyntheticScene {
            width: 32,
            height: 24,
            intrinsics: CameraIntrinsics::new(32.0, 32.0, 15.5, 11.5).unwrap(),
            regions: vec![region([0.0, 0.0, 0.1], Shape::Full)],
            seed: 1,
            occlusion_gap: 2.0,
        };
        let out = generate_scene(&spec, 3).unwrap();
        assert_eq!(out.labels.region_count(), 1);
        assert!(out.occluding.is_empty());
        // ray distance grows off-axis; z-depth is 10 everywhere
        for (i, d) in out.depths[0].values.iter().enumerate() {
            let r = pixel_ray(&spec.intrinsics, (i % 32) as f64, (i / 32) as f64);
            assert!((d * r.dir().z - 10.0).abs() < 1e-9);
        }
    }

    #[test]
    fn ground_and_wall_boundary_is_occluding() {
        let spec = SyntheticScene {
            width: 32,
            height: 24,
            intrinsics: k(),
            regions: vec![region([0.0, 0.0, 1.0 / 30.0], Shape::Full), region([0.0, 1.0 / 1.5, 0.0], Shape::Below { row: 14.0 })],
            seed: 2,
            occlusion_gap: 2.0,
        };
        let out = generate_scene(&spec, 1).unwrap();
        assert_eq!(out.occluding.len(), 1);
        assert!(*out.occluding.values().next().unwrap());
    }

    #[test]
    fn slanted_ground_depth_grows_upward() {
        let spec = SyntheticScene {
            width: 32,
            height: 24,
            intrinsics: k(),
            regions: vec![region([0.0, 0.05, 0.05], Shape::Full)],
            seed: 3,
            occlusion_gap: 2.0,
        };
        let out = generate_scene(&spec, 1).unwrap();
        let col: Vec<f64> = (0..24).map(|y| out.depths[0].values[y * 32 + 16]).collect();
        assert!(col.windows(2).all(|w| w[0] > w[1]), "{col:?}");
    }

    #[test]
    fn uncovered_layout_is_rejected() {
        let spec = SyntheticScene {
            width: 8,
            height: 8,
            intrinsics: k(),
            regions: vec![region([0.0, 0.0, 0.1], Shape::Above { row: 4.0 })],
            seed: 0,
            occlusion_gap: 2.0,
        };
        assert!(generate_scene(&spec, 1).is_err());
    }

    #[test]
    fn layered_scenes_gate_only_coplanar_pairs() {
        for seed in 0..10 {
            let spec = random_layered_scene(seed, 6, 48, 36);
            let out = generate_scene(&spec, 4).unwrap();
            for (&(_, i, j), &occ) in &out.occluding {
                let same = out.planes[&i] == out.planes[&j];
                assert_eq!(!occ, same, "seed {seed} pair ({i},{j})");
            }
        }
    }
}
