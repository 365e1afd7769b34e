//! Dense optical flow.
//!
//! Coarse-to-fine Horn–Schunck with image warping at every pyramid level.
//! Flows between non-adjacent frames are built by chaining the
//! consecutive-frame fields with bilinear resampling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{bilinear, Plane, RgbFrame};

/// Per-pixel displacement `(du, dv)` in pixels, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f32>,
    pub v: Vec<f32>,
    /// Set when the field stands in for a frame before the start of the
    /// video; such fields are all zero.
    pub padded: bool,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            width,
            height,
            u: vec![0.0; width * height],
            v: vec![0.0; width * height],
            padded: false,
        }
    }

    pub fn padding(width: usize, height: usize) -> Self {
        FlowField {
            padded: true,
            ..FlowField::zeros(width, height)
        }
    }

    pub fn uniform(width: usize, height: usize, du: f32, dv: f32) -> Self {
        FlowField {
            width,
            height,
            u: vec![du; width * height],
            v: vec![dv; width * height],
            padded: false,
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.u[i] as f64, self.v[i] as f64)
    }

    pub fn sample(&self, x: f64, y: f64) -> (f64, f64) {
        (
            bilinear(self.width, self.height, x, y, |i| self.u[i] as f64),
            bilinear(self.width, self.height, x, y, |i| self.v[i] as f64),
        )
    }

    pub fn magnitude(&self, i: usize) -> f64 {
        (self.u[i] as f64).hypot(self.v[i] as f64)
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).all(|x| x.is_finite())
    }

    pub fn u_plane(&self) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.u.iter().map(|x| *x as f64).collect(),
        }
    }

    pub fn v_plane(&self) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.v.iter().map(|x| *x as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowParams {
    pub pyramid_levels: usize,
    pub iterations: usize,
    /// Horn–Schunck smoothness weight, in intensity units (0..255 scale).
    pub smoothness: f64,
    pub warps: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            pyramid_levels: 3,
            iterations: 100,
            smoothness: 15.0,
            warps: 2,
        }
    }
}

/// Flow from `a` to `b`: pixel `(x, y)` of `a` appears at `(x + du, y + dv)`
/// in `b`.
pub fn dense_flow(a: &RgbFrame, b: &RgbFrame, params: &FlowParams) -> Result<FlowField> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::dims(
            format!("{}x{}", a.width, a.height),
            format!("{}x{}", b.width, b.height),
        ));
    }
    if params.pyramid_levels == 0 {
        return Err(Error::InvalidParameter("pyramid_levels must be >= 1".into()));
    }
    let pre = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    let mut pyr_a = vec![a.to_gray().filter_separable(&pre, &pre)];
    let mut pyr_b = vec![b.to_gray().filter_separable(&pre, &pre)];
    for _ in 1..params.pyramid_levels {
        let (la, lb) = (pyr_a.last().unwrap(), pyr_b.last().unwrap());
        if la.width < 8 || la.height < 8 {
            break;
        }
        let (da, db) = (la.pyr_down(), lb.pyr_down());
        pyr_a.push(da);
        pyr_b.push(db);
    }

    let coarsest = pyr_a.last().unwrap();
    let mut u = Plane::zeros(coarsest.width, coarsest.height);
    let mut v = Plane::zeros(coarsest.width, coarsest.height);
    for level in (0..pyr_a.len()).rev() {
        let (la, lb) = (&pyr_a[level], &pyr_b[level]);
        if u.width != la.width || u.height != la.height {
            u = upsample(&u, la.width, la.height);
            v = upsample(&v, la.width, la.height);
        }
        for _ in 0..params.warps.max(1) {
            refine(la, lb, &mut u, &mut v, params);
        }
    }

    Ok(FlowField {
        width: a.width,
        height: a.height,
        u: u.data.iter().map(|x| *x as f32).collect(),
        v: v.data.iter().map(|x| *x as f32).collect(),
        padded: false,
    })
}

fn upsample(p: &Plane, width: usize, height: usize) -> Plane {
    let sx = p.width as f64 / width as f64;
    let sy = p.height as f64 / height as f64;
    let mut out = Plane::zeros(width, height);
    for y in 0..height {
        for x in 0..width {
            out.data[y * width + x] = p.sample(x as f64 * sx, y as f64 * sy) / sx;
        }
    }
    out
}

/// One warp: linearize around the current flow and run Jacobi sweeps of the
/// Horn–Schunck update on the total flow.
fn refine(a: &Plane, b: &Plane, u: &mut Plane, v: &mut Plane, params: &FlowParams) {
    let (w, h) = (a.width, a.height);
    let n = w * h;
    let mut warped = vec![0.0; n];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            warped[i] = b.sample(x as f64 + u.data[i], y as f64 + v.data[i]);
        }
    }
    // Derivatives of the average of a and warped b, central differences.
    let avg = |x: isize, y: isize| {
        let xc = x.clamp(0, w as isize - 1) as usize;
        let yc = y.clamp(0, h as isize - 1) as usize;
        let i = yc * w + xc;
        0.5 * (a.data[i] + warped[i])
    };
    let mut ix = vec![0.0; n];
    let mut iy = vec![0.0; n];
    let mut it = vec![0.0; n];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            ix[i] = 0.5 * (avg(x + 1, y) - avg(x - 1, y));
            iy[i] = 0.5 * (avg(x, y + 1) - avg(x, y - 1));
            it[i] = warped[i] - a.data[i];
        }
    }
    let u0 = u.data.clone();
    let v0 = v.data.clone();
    let lambda2 = params.smoothness * params.smoothness;
    let mut next_u = vec![0.0; n];
    let mut next_v = vec![0.0; n];
    for _ in 0..params.iterations {
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let ub = neighborhood_mean(&u.data, w, h, x, y);
                let vb = neighborhood_mean(&v.data, w, h, x, y);
                let num = ix[i] * (ub - u0[i]) + iy[i] * (vb - v0[i]) + it[i];
                let den = lambda2 + ix[i] * ix[i] + iy[i] * iy[i];
                next_u[i] = ub - ix[i] * num / den;
                next_v[i] = vb - iy[i] * num / den;
            }
        }
        std::mem::swap(&mut u.data, &mut next_u);
        std::mem::swap(&mut v.data, &mut next_v);
    }
}

/// Horn–Schunck weighted neighborhood average (1/6 edge, 1/12 corner).
#[inline]
fn neighborhood_mean(d: &[f64], w: usize, h: usize, x: usize, y: usize) -> f64 {
    let at = |dx: isize, dy: isize| {
        let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
        let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
        d[yy * w + xx]
    };
    (at(-1, 0) + at(1, 0) + at(0, -1) + at(0, 1)) / 6.0
        + (at(-1, -1) + at(1, -1) + at(-1, 1) + at(1, 1)) / 12.0
}

/// Flow from frame `j` to frame `j - offset`.
///
/// `backward[t]` must hold the flow from frame `t + 1` to frame `t`. Offsets
/// reaching before frame 0 yield a padded zero field.
pub fn flow_to(backward: &[FlowField], width: usize, height: usize, j: usize, offset: usize) -> FlowField {
    if offset == 0 {
        return FlowField::zeros(width, height);
    }
    if j < offset || j > backward.len() {
        return FlowField::padding(width, height);
    }
    let mut acc = backward[j - 1].clone();
    for step in 1..offset {
        // acc maps frame j to frame j - step; extend with (j-step) -> (j-step-1).
        let next = &backward[j - step - 1];
        for y in 0..height {
            for x in 0..width {
                let i = y * width + x;
                let (du, dv) = (acc.u[i] as f64, acc.v[i] as f64);
                let (nu, nv) = next.sample(x as f64 + du, y as f64 + dv);
                acc.u[i] = (du + nu) as f32;
                acc.v[i] = (dv + nv) as f32;
            }
        }
    }
    acc
}

/// Backward flows for a whole video: element `t` is the flow from frame
/// `t + 1` to frame `t`.
pub fn backward_flows(frames: &[RgbFrame], params: &FlowParams) -> Result<Vec<FlowField>> {
    use rayon::prelude::*;
    (1..frames.len())
        .into_par_iter()
        .map(|t| dense_flow(&frames[t], &frames[t - 1], params))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise_frame(w: usize, h: usize, seed: u64) -> RgbFrame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pixels = (0..w * h)
            .map(|_| {
                let g: u8 = rng.random();
                [g, g, g]
            })
            .collect();
        RgbFrame::new(w, h, pixels).unwrap()
    }

    fn shifted(f: &RgbFrame, dx: isize) -> RgbFrame {
        let mut out = f.clone();
        for y in 0..f.height {
            for x in 0..f.width {
                let sx = (x as isize - dx).rem_euclid(f.width as isize) as usize;
                out.pixels[y * f.width + x] = f.pixel(sx, y);
            }
        }
        out
    }

    fn interior_mean(f: &FlowField, margin: usize) -> (f64, f64) {
        let (mut su, mut sv, mut n) = (0.0, 0.0, 0.0);
        for y in margin..f.height - margin {
            for x in margin..f.width - margin {
                let (u, v) = f.at(x, y);
                su += u;
                sv += v;
                n += 1.0;
            }
        }
        (su / n, sv / n)
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let a = noise_frame(40, 30, 1);
        let f = dense_flow(&a, &a, &FlowParams::default()).unwrap();
        assert!(f.u.iter().chain(&f.v).all(|x| *x == 0.0));
    }

    #[test]
    fn flat_frames_give_zero_flow() {
        let a = RgbFrame::filled(32, 32, [90, 90, 90]);
        let b = RgbFrame::filled(32, 32, [90, 90, 90]);
        let f = dense_flow(&a, &b, &FlowParams::default()).unwrap();
        assert!(f.u.iter().chain(&f.v).all(|x| *x == 0.0));
    }

    #[test]
    fn recovers_integer_shift() {
        let a = noise_frame(64, 64, 7);
        let b = shifted(&a, 2);
        let f = dense_flow(&a, &b, &FlowParams::default()).unwrap();
        let (mu, mv) = interior_mean(&f, 8);
        assert!((1.75..=2.25).contains(&mu), "mean du {mu}");
        assert!((-0.25..=0.25).contains(&mv), "mean dv {mv}");
    }

    #[test]
    fn mismatched_sizes_rejected() {
        let err = dense_flow(
            &RgbFrame::filled(4, 4, [0; 3]),
            &RgbFrame::filled(5, 4, [0; 3]),
            &FlowParams::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn offset_one_is_the_consecutive_field() {
        let frames: Vec<RgbFrame> = (0..3).map(|t| shifted(&noise_frame(32, 32, 3), -t)).collect();
        let back = backward_flows(&frames, &FlowParams::default()).unwrap();
        let direct = dense_flow(&frames[2], &frames[1], &FlowParams::default()).unwrap();
        assert_eq!(flow_to(&back, 32, 32, 2, 1), direct);
    }

    #[test]
    fn offsets_before_start_are_padded() {
        let back = vec![FlowField::uniform(4, 4, 1.0, 0.0); 3];
        let f = flow_to(&back, 4, 4, 2, 3);
        assert!(f.padded);
        assert!(f.u.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn static_video_composes_to_zero() {
        let frames = vec![noise_frame(24, 24, 5); 6];
        let back = backward_flows(&frames, &FlowParams::default()).unwrap();
        let f = flow_to(&back, 24, 24, 5, 5);
        assert!(!f.padded);
        assert!(f.u.iter().chain(&f.v).all(|x| *x == 0.0));
    }

    #[test]
    fn pan_composes_across_frames() {
        // Content moves left 1 px per frame, so frame j -> j-1 flow is +1.
        let base = noise_frame(64, 48, 11);
        let frames: Vec<RgbFrame> = (0..5).map(|t| shifted(&base, -(t as isize))).collect();
        let back = backward_flows(&frames, &FlowParams::default()).unwrap();
        let f = flow_to(&back, 64, 48, 4, 3);
        let (mu, _) = interior_mean(&f, 8);
        assert!((mu - 3.0).abs() < 0.5, "mean du {mu}");
    }
}
