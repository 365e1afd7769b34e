//! Frames, video volumes and the small set of raster operations the
//! pipeline needs (grayscale, convolution, bilinear sampling, pyramids).

use crate::error::{Error, Result};

/// 8-bit RGB frame, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbFrame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

impl RgbFrame {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::dims(width * height, pixels.len()));
        }
        Ok(RgbFrame {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        RgbFrame {
            width,
            height,
            pixels: vec![rgb; width * height],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }

    /// Luma in [0, 255].
    pub fn to_gray(&self) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self
                .pixels
                .iter()
                .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
                .collect(),
        }
    }

    /// Bilinear sample of one channel, clamping to the border.
    pub fn sample(&self, x: f64, y: f64) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            *o = bilinear(self.width, self.height, x, y, |i| self.pixels[i][c] as f64);
        }
        out
    }

    pub fn to_image(&self) -> image::RgbImage {
        let mut img = image::RgbImage::new(self.width as u32, self.height as u32);
        for (i, p) in self.pixels.iter().enumerate() {
            img.put_pixel((i % self.width) as u32, (i / self.width) as u32, image::Rgb(*p));
        }
        img
    }

    pub fn from_image(img: &image::RgbImage) -> Self {
        RgbFrame {
            width: img.width() as usize,
            height: img.height() as usize,
            pixels: img.pixels().map(|p| p.0).collect(),
        }
    }
}

/// Ordered frames sharing one size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoVolume {
    width: usize,
    height: usize,
    frames: Vec<RgbFrame>,
}

impl VideoVolume {
    pub fn new(frames: Vec<RgbFrame>) -> Result<Self> {
        let first = frames.first().ok_or(Error::EmptyInput("video has no frames"))?;
        let (width, height) = (first.width, first.height);
        if width == 0 || height == 0 {
            return Err(Error::EmptyInput("video frames have zero area"));
        }
        for (t, f) in frames.iter().enumerate() {
            if f.width != width || f.height != height {
                return Err(Error::dims(
                    format!("{width}x{height}"),
                    format!("{}x{} at frame {t}", f.width, f.height),
                ));
            }
        }
        Ok(VideoVolume {
            width,
            height,
            frames,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[RgbFrame] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &RgbFrame {
        &self.frames[t]
    }
}

/// Single-channel f64 raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn zeros(width: usize, height: usize) -> Self {
        Plane {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    fn clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.data[y * self.width + x]
    }

    pub fn sample(&self, x: f64, y: f64) -> f64 {
        bilinear(self.width, self.height, x, y, |i| self.data[i])
    }

    /// 2D correlation with an odd-sized kernel, replicating the border.
    pub fn filter(&self, kernel: &Kernel) -> Plane {
        let (rx, ry) = (kernel.width as isize / 2, kernel.height as isize / 2);
        let mut out = Plane::zeros(self.width, self.height);
        for y in 0..self.height as isize {
            for x in 0..self.width as isize {
                let mut acc = 0.0;
                for ky in 0..kernel.height as isize {
                    for kx in 0..kernel.width as isize {
                        let w = kernel.data[(ky as usize) * kernel.width + kx as usize];
                        if w != 0.0 {
                            acc += w * self.clamped(x + kx - rx, y + ky - ry);
                        }
                    }
                }
                out.data[y as usize * self.width + x as usize] = acc;
            }
        }
        out
    }

    /// Separable correlation: `row` along x then `col` along y, replicating
    /// the border.
    pub fn filter_separable(&self, row: &[f64], col: &[f64]) -> Plane {
        let rr = row.len() as isize / 2;
        let rc = col.len() as isize / 2;
        let mut tmp = Plane::zeros(self.width, self.height);
        for y in 0..self.height as isize {
            for x in 0..self.width as isize {
                let acc: f64 = row
                    .iter()
                    .enumerate()
                    .map(|(k, w)| w * self.clamped(x + k as isize - rr, y))
                    .sum();
                tmp.data[y as usize * self.width + x as usize] = acc;
            }
        }
        let mut out = Plane::zeros(self.width, self.height);
        for y in 0..self.height as isize {
            for x in 0..self.width as isize {
                let acc: f64 = col
                    .iter()
                    .enumerate()
                    .map(|(k, w)| w * tmp.clamped(x, y + k as isize - rc))
                    .sum();
                out.data[y as usize * self.width + x as usize] = acc;
            }
        }
        out
    }

    /// Blur with a 5-tap binomial kernel and drop every other sample.
    pub fn pyr_down(&self) -> Plane {
        let k = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
        let blurred = self.filter_separable(&k, &k);
        let w = self.width.div_ceil(2);
        let h = self.height.div_ceil(2);
        let mut out = Plane::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                out.data[y * w + x] = blurred.at(2 * x, 2 * y);
            }
        }
        out
    }
}

/// Dense odd-sized correlation kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Kernel {
    /// Build from a function of the offset `(dx, dy)` from the kernel center.
    pub fn from_fn(radius: usize, f: impl Fn(f64, f64) -> f64) -> Kernel {
        let size = 2 * radius + 1;
        let mut data = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                data.push(f(x as f64 - radius as f64, y as f64 - radius as f64));
            }
        }
        Kernel {
            width: size,
            height: size,
            data,
        }
    }

    pub fn remove_mean(mut self) -> Kernel {
        let mean = self.data.iter().sum::<f64>() / self.data.len() as f64;
        self.data.iter_mut().for_each(|v| *v -= mean);
        self
    }

    /// Scale so the absolute weights sum to one.
    pub fn l1_normalize(mut self) -> Kernel {
        let s: f64 = self.data.iter().map(|v| v.abs()).sum();
        if s > 0.0 {
            self.data.iter_mut().for_each(|v| *v /= s);
        }
        self
    }
}

pub(crate) fn bilinear(
    width: usize,
    height: usize,
    x: f64,
    y: f64,
    get: impl Fn(usize) -> f64,
) -> f64 {
    let x = x.clamp(0.0, (width - 1) as f64);
    let y = y.clamp(0.0, (height - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let top = get(y0 * width + x0) * (1.0 - fx) + get(y0 * width + x1) * fx;
    let bottom = get(y1 * width + x0) * (1.0 - fx) + get(y1 * width + x1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// RGB in [0,1] to HSV with hue in [0,1).
pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    [h, s, v]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hsv_reference_colors() {
        assert_eq!(rgb_to_hsv(1.0, 0.0, 0.0), [0.0, 1.0, 1.0]);
        assert_eq!(rgb_to_hsv(0.0, 1.0, 0.0), [1.0 / 3.0, 1.0, 1.0]);
        assert_eq!(rgb_to_hsv(0.0, 0.0, 1.0), [2.0 / 3.0, 1.0, 1.0]);
        assert_eq!(rgb_to_hsv(0.5, 0.5, 0.5), [0.0, 0.0, 0.5]);
    }

    #[test]
    fn separable_matches_dense() {
        let p = Plane {
            width: 7,
            height: 5,
            data: (0..35).map(|i| ((i * 37) % 11) as f64).collect(),
        };
        let row = [1.0, 2.0, -1.0];
        let col = [0.5, 0.25, 0.25];
        let dense = Kernel {
            width: 3,
            height: 3,
            data: col.iter().flat_map(|c| row.iter().map(move |r| r * c)).collect(),
        };
        let a = p.filter_separable(&row, &col);
        let b = p.filter(&dense);
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn bilinear_interpolates_and_clamps() {
        let p = Plane {
            width: 2,
            height: 2,
            data: vec![0.0, 1.0, 2.0, 3.0],
        };
        assert_eq!(p.sample(0.5, 0.5), 1.5);
        assert_eq!(p.sample(-3.0, -3.0), 0.0);
        assert_eq!(p.sample(9.0, 9.0), 3.0);
    }

    #[test]
    fn video_rejects_mixed_sizes() {
        let err = VideoVolume::new(vec![RgbFrame::filled(2, 2, [0; 3]), RgbFrame::filled(3, 2, [0; 3])])
            .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
        assert!(matches!(VideoVolume::new(vec![]), Err(Error::EmptyInput(_))));
    }
}
