use std::f64::consts::PI;

use super::gc::{GeometricContextMap, GC_CLASSES};
use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::imaging::{rgb_to_hsv, Kernel, Plane, RgbFrame};

pub const TEXTURE_FILTERS: usize = 15;
pub const MOTION_OFFSETS: [usize; 3] = [1, 3, 5];
pub const SOBEL_SIZES: [usize; 3] = [3, 5, 7];
pub const ORIENTATION_BINS: usize = 8;
/// Lower edges of the flow-derivative histogram bins, in pixels per pixel.
/// The last bin is open-ended.
pub const DERIVATIVE_BIN_EDGES: [f64; 4] = [0.0, 0.1, 0.5, 2.0];
/// Values per flow offset: orientation histogram, mean du, mean dv, mean
/// magnitude, then an x and a y derivative histogram per Sobel size.
pub const MOTION_PER_OFFSET: usize = ORIENTATION_BINS + 3 + SOBEL_SIZES.len() * 8;

fn nonempty(pixels: &[usize]) -> Result<()> {
    if pixels.is_empty() {
        Err(Error::EmptyInput("region has no pixels"))
    } else {
        Ok(())
    }
}

/// Sums in ascending pixel order so results do not depend on how the caller
/// enumerated the region.
fn sorted(pixels: &[usize]) -> std::borrow::Cow<'_, [usize]> {
    if pixels.windows(2).all(|w| w[0] <= w[1]) {
        std::borrow::Cow::Borrowed(pixels)
    } else {
        let mut v = pixels.to_vec();
        v.sort_unstable();
        std::borrow::Cow::Owned(v)
    }
}

/// Mean R, G, B (scaled to [0,1]) and mean per-pixel H, S, V.
pub fn color_features(frame: &RgbFrame, pixels: &[usize]) -> Result<[f64; 6]> {
    nonempty(pixels)?;
    let mut acc = [0.0; 6];
    for &i in sorted(pixels).iter() {
        let p = frame.pixels[i];
        let rgb = [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0];
        let hsv = rgb_to_hsv(rgb[0], rgb[1], rgb[2]);
        for c in 0..3 {
            acc[c] += rgb[c];
            acc[3 + c] += hsv[c];
        }
    }
    let n = pixels.len() as f64;
    Ok(acc.map(|v| v / n))
}

/// Fifteen zero-mean kernels, each scaled to unit L1 norm:
/// odd Gaussian first derivatives at 0°, 45°, 90°, 135° for σ = 1 and 2,
/// Laplacians of Gaussian at σ = 1, √2, 2, 2√2, and even bar filters
/// (second derivative across an elongated Gaussian) at 0°, 60°, 120°.
#[derive(Debug, Clone)]
pub struct TextureBank {
    kernels: Vec<Kernel>,
}

impl Default for TextureBank {
    fn default() -> Self {
        Self::new()
    }
}

impl TextureBank {
    pub fn new() -> Self {
        let mut kernels = Vec::with_capacity(TEXTURE_FILTERS);
        for sigma in [1.0f64, 2.0] {
            for k in 0..4 {
                let th = k as f64 * PI / 4.0;
                let (c, s) = (th.cos(), th.sin());
                let r = (3.0 * sigma).ceil() as usize;
                kernels.push(
                    Kernel::from_fn(r, |dx, dy| {
                        let along = dx * c + dy * s;
                        -along * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
                    })
                    .remove_mean()
                    .l1_normalize(),
                );
            }
        }
        for sigma in [1.0f64, 2f64.sqrt(), 2.0, 2.0 * 2f64.sqrt()] {
            let r = (3.0 * sigma).ceil() as usize;
            let s2 = sigma * sigma;
            kernels.push(
                Kernel::from_fn(r, |dx, dy| {
                    let q = (dx * dx + dy * dy) / (2.0 * s2);
                    (q - 1.0) * (-q).exp()
                })
                .remove_mean()
                .l1_normalize(),
            );
        }
        let (across, along) = (1.0f64, 3.0f64);
        for k in 0..3 {
            let th = k as f64 * PI / 3.0;
            let (c, s) = (th.cos(), th.sin());
            kernels.push(
                Kernel::from_fn(9, |dx, dy| {
                    // Bar oriented along `th`; second derivative across it.
                    let u = dx * c + dy * s;
                    let v = -dx * s + dy * c;
                    let g = (-(u * u) / (2.0 * along * along) - (v * v) / (2.0 * across * across)).exp();
                    (v * v / across.powi(4) - 1.0 / (across * across)) * g
                })
                .remove_mean()
                .l1_normalize(),
            );
        }
        TextureBank { kernels }
    }

    pub fn kernels(&self) -> &[Kernel] {
        &self.kernels
    }

    /// Filter responses on the luma channel scaled to [0,1].
    pub fn responses(&self, frame: &RgbFrame) -> Vec<Plane> {
        let mut gray = frame.to_gray();
        gray.data.iter_mut().for_each(|v| *v /= 255.0);
        self.kernels.iter().map(|k| gray.filter(k)).collect()
    }
}

/// Mean absolute filter response over the region.
pub fn texture_features(responses: &[Plane], pixels: &[usize]) -> Result<[f64; TEXTURE_FILTERS]> {
    nonempty(pixels)?;
    if responses.len() != TEXTURE_FILTERS {
        return Err(Error::dims(TEXTURE_FILTERS, responses.len()));
    }
    let px = sorted(pixels);
    let n = pixels.len() as f64;
    let mut out = [0.0; TEXTURE_FILTERS];
    for (o, r) in out.iter_mut().zip(responses) {
        *o = px.iter().map(|&i| r.data[i].abs()).sum::<f64>() / n;
    }
    Ok(out)
}

/// Mean row over the frame height, and its offset from the horizon row.
pub fn location_features(pixels: &[usize], width: usize, height: usize, horizon: f64) -> Result<[f64; 2]> {
    nonempty(pixels)?;
    let mean_y = sorted(pixels).iter().map(|&i| (i / width) as f64).sum::<f64>() / pixels.len() as f64;
    let h = height as f64;
    Ok([mean_y / h, (mean_y - horizon) / h])
}

fn binomial(n: usize) -> Vec<f64> {
    let mut row = vec![1.0];
    for _ in 0..n {
        let mut next = vec![1.0; row.len() + 1];
        for i in 1..row.len() {
            next[i] = row[i - 1] + row[i];
        }
        row = next;
    }
    row
}

/// Smoothing and derivative taps of the `size`-tap Sobel operator, scaled
/// so that a unit ramp has derivative 1 and a constant has smoothing 1.
pub fn sobel_kernels(size: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(size >= 3 && size % 2 == 1, "Sobel size must be odd and >= 3");
    let smooth = binomial(size - 1);
    let s: f64 = smooth.iter().sum();
    let smooth: Vec<f64> = smooth.iter().map(|v| v / s).collect();
    let base = binomial(size - 3);
    let mut deriv = vec![0.0; size];
    for (i, b) in base.iter().enumerate() {
        deriv[i] -= b;
        deriv[i + 2] += b;
    }
    let r = (size / 2) as f64;
    let ramp: f64 = deriv.iter().enumerate().map(|(i, d)| d * (i as f64 - r)).sum();
    (smooth, deriv.iter().map(|d| d / ramp).collect())
}

/// A flow field with its derivative-magnitude maps precomputed.
#[derive(Debug, Clone)]
pub struct MotionField {
    pub flow: FlowField,
    /// Per Sobel size: (|∂flow/∂x|, |∂flow/∂y|), where the magnitude is taken
    /// over the (du, dv) components.
    pub derivatives: Vec<(Plane, Plane)>,
}

impl MotionField {
    pub fn new(flow: FlowField) -> Self {
        let derivatives = if flow.padded {
            Vec::new()
        } else {
            let (u, v) = (flow.u_plane(), flow.v_plane());
            SOBEL_SIZES
                .iter()
                .map(|&k| {
                    let (s, d) = sobel_kernels(k);
                    let mag = |a: Plane, b: Plane| Plane {
                        width: a.width,
                        height: a.height,
                        data: a.data.iter().zip(&b.data).map(|(x, y)| x.hypot(*y)).collect(),
                    };
                    let dx = mag(u.filter_separable(&d, &s), v.filter_separable(&d, &s));
                    let dy = mag(u.filter_separable(&s, &d), v.filter_separable(&s, &d));
                    (dx, dy)
                })
                .collect()
        };
        MotionField { flow, derivatives }
    }
}

/// Orientation bin of a flow vector: eight bins centered on multiples of
/// 45°, bin 0 centered on the +x direction.
pub fn orientation_bin(du: f64, dv: f64) -> usize {
    let a = dv.atan2(du);
    ((a / (PI / 4.0)).round() as i64).rem_euclid(ORIENTATION_BINS as i64) as usize
}

pub fn derivative_bin(m: f64) -> usize {
    DERIVATIVE_BIN_EDGES.iter().rposition(|&e| m >= e).unwrap_or(0)
}

/// Motion block for one flow offset. All zeros for padded flows.
pub fn motion_offset_features(m: &MotionField, pixels: &[usize]) -> Result<[f64; MOTION_PER_OFFSET]> {
    nonempty(pixels)?;
    let mut out = [0.0; MOTION_PER_OFFSET];
    if m.flow.padded {
        return Ok(out);
    }
    let px = sorted(pixels);
    let n = pixels.len() as f64;
    let mut total_mag = 0.0;
    for &i in px.iter() {
        let (du, dv) = (m.flow.u[i] as f64, m.flow.v[i] as f64);
        let mag = du.hypot(dv);
        if mag > 0.0 {
            out[orientation_bin(du, dv)] += mag;
            total_mag += mag;
        }
        out[ORIENTATION_BINS] += du;
        out[ORIENTATION_BINS + 1] += dv;
        out[ORIENTATION_BINS + 2] += mag;
    }
    if total_mag > 0.0 {
        out[..ORIENTATION_BINS].iter_mut().for_each(|v| *v /= total_mag);
    }
    for v in &mut out[ORIENTATION_BINS..ORIENTATION_BINS + 3] {
        *v /= n;
    }
    for (s, (dx, dy)) in m.derivatives.iter().enumerate() {
        let base = ORIENTATION_BINS + 3 + s * 8;
        for &i in px.iter() {
            out[base + derivative_bin(dx.data[i])] += 1.0;
            out[base + 4 + derivative_bin(dy.data[i])] += 1.0;
        }
        out[base..base + 8].iter_mut().for_each(|v| *v /= n);
    }
    Ok(out)
}

/// Motion block for the three offsets (1, 3, 5 frames back).
pub fn motion_features(fields: &[MotionField; 3], pixels: &[usize]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(3 * MOTION_PER_OFFSET);
    for f in fields {
        out.extend_from_slice(&motion_offset_features(f, pixels)?);
    }
    Ok(out)
}

/// Mean class confidences over the region.
pub fn geometric_features(gc: &GeometricContextMap, width: usize, height: usize, pixels: &[usize]) -> Result<[f64; GC_CLASSES]> {
    nonempty(pixels)?;
    if gc.width != width || gc.height != height {
        return Err(Error::dims(format!("{width}x{height}"), format!("{}x{}", gc.width, gc.height)));
    }
    let mut out = [0.0; GC_CLASSES];
    for &i in sorted(pixels).iter() {
        for (o, c) in out.iter_mut().zip(&gc.conf[i]) {
            *o += *c as f64;
        }
    }
    let n = pixels.len() as f64;
    Ok(out.map(|v| v / n))
}
