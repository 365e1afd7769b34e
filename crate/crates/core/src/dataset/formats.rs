//! On-disk formats. Every writer goes through [`atomic_write`], so a failed
//! run never leaves a truncated file behind.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::GeometricContextMap;
use crate::flow::FlowField;
use crate::geometry::{DepthMap, PlaneParams};
use crate::imaging::{RgbFrame, VideoVolume};
use crate::segmentation::SegmentationLabelMap;

/// Write through a temporary file in the destination directory, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Little-endian cursor over a byte slice.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    format: &'static str,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8], format: &'static str) -> Self {
        ByteReader {
            bytes,
            pos: 0,
            format,
        }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.format, "unexpected end of data"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.pos == self.bytes.len()
    }

    pub(crate) fn rest(&self) -> &'a [u8] {
        &self.bytes[self.pos..]
    }
}

// ---------------------------------------------------------------- PFM

/// Grayscale PFM ("Pf"), little-endian, rows stored bottom to top.
pub fn encode_pfm(width: usize, height: usize, data: &[f32]) -> Result<Vec<u8>> {
    if data.len() != width * height {
        return Err(Error::dims(width * height, data.len()));
    }
    let mut out = format!("Pf\n{width} {height}\n-1.0\n").into_bytes();
    out.reserve(data.len() * 4);
    for y in (0..height).rev() {
        for v in &data[y * width..(y + 1) * width] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_pfm(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    const FMT: &str = "PFM";
    // Header: three whitespace-separated tokens after the magic, then a
    // single whitespace byte before the raster.
    let mut tokens = Vec::new();
    let mut pos = 0;
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(FMT, "truncated header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| Error::format(FMT, "non-ascii header"))?);
    }
    pos += 1;
    match tokens[0] {
        "Pf" => {}
        "PF" => return Err(Error::format(FMT, "color PFM is not a depth map")),
        other => return Err(Error::format(FMT, format!("bad magic {other:?}"))),
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::format(FMT, format!("bad dimension {s:?}")));
    let (width, height) = (parse(tokens[1])?, parse(tokens[2])?);
    let scale: f64 = tokens[3]
        .parse()
        .map_err(|_| Error::format(FMT, format!("bad scale {:?}", tokens[3])))?;
    if scale == 0.0 {
        return Err(Error::format(FMT, "zero scale"));
    }
    let little = scale < 0.0;
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() != width * height * 4 {
        return Err(Error::format(
            FMT,
            format!("expected {} raster bytes, found {}", width * height * 4, raster.len()),
        ));
    }
    let mut data = vec![0f32; width * height];
    for (k, chunk) in raster.chunks_exact(4).enumerate() {
        let b: [u8; 4] = chunk.try_into().unwrap();
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (row_from_bottom, x) = (k / width, k % width);
        data[(height - 1 - row_from_bottom) * width + x] = v;
    }
    Ok((width, height, data))
}

pub fn write_depth_pfm(path: &Path, d: &DepthMap) -> Result<()> {
    let data: Vec<f32> = d
        .values
        .iter()
        .zip(&d.valid)
        .map(|(v, ok)| if *ok { *v as f32 } else { 0.0 })
        .collect();
    atomic_write(path, &encode_pfm(d.width, d.height, &data)?)
}

pub fn read_depth_pfm(path: &Path) -> Result<DepthMap> {
    let (w, h, data) = decode_pfm(&read_file(path)?)?;
    DepthMap::from_values(w, h, data.into_iter().map(f64::from).collect())
}

// ---------------------------------------------------------------- PNG16

/// Largest depth representable in the millimeter PNG, in meters.
pub const PNG16_MAX_DEPTH: f64 = u16::MAX as f64 / 1000.0;

pub fn depth_to_png16(d: &DepthMap) -> image::ImageBuffer<image::Luma<u16>, Vec<u16>> {
    let mut img = image::ImageBuffer::new(d.width as u32, d.height as u32);
    for (i, (v, ok)) in d.values.iter().zip(&d.valid).enumerate() {
        let mm = if *ok { (v * 1000.0).round().clamp(1.0, u16::MAX as f64) as u16 } else { 0 };
        img.put_pixel((i % d.width) as u32, (i / d.width) as u32, image::Luma([mm]));
    }
    img
}

pub fn write_depth_png16(path: &Path, d: &DepthMap) -> Result<()> {
    let img = depth_to_png16(d);
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)?;
    atomic_write(path, buf.get_ref())
}

pub fn read_depth_png16(path: &Path) -> Result<DepthMap> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()?;
    let img = match img {
        image::DynamicImage::ImageLuma16(i) => i,
        other => return Err(Error::format("PNG16 depth", format!("expected 16-bit gray, got {:?}", other.color()))),
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    DepthMap::from_values(w, h, img.pixels().map(|p| p.0[0] as f64 / 1000.0).collect())
}

// ---------------------------------------------------------------- previews

/// Rows of the legend bar appended below a preview.
pub const PREVIEW_LEGEND_ROWS: usize = 6;

/// Blue (0 m) through cyan, green and yellow to red (80 m).
pub fn depth_color(depth: f64) -> [u8; 3] {
    let t = (depth / crate::geometry::MAX_DEPTH).clamp(0.0, 1.0);
    let ramp = |c: f64| ((1.5 - (4.0 * t - c).abs()).clamp(0.0, 1.0) * 255.0).round() as u8;
    [ramp(3.0), ramp(2.0), ramp(1.0)]
}

/// Color-mapped depth with a 0–80 m legend bar underneath. Invalid pixels
/// are black.
pub fn depth_preview(d: &DepthMap) -> RgbFrame {
    let w = d.width.max(1);
    let mut pixels: Vec<[u8; 3]> = d
        .values
        .iter()
        .zip(&d.valid)
        .map(|(v, ok)| if *ok { depth_color(*v) } else { [0, 0, 0] })
        .collect();
    for _ in 0..PREVIEW_LEGEND_ROWS {
        pixels.extend((0..w).map(|x| depth_color(crate::geometry::MAX_DEPTH * x as f64 / (w - 1).max(1) as f64)));
    }
    RgbFrame {
        width: w,
        height: d.height + PREVIEW_LEGEND_ROWS,
        pixels,
    }
}

pub fn write_depth_preview(path: &Path, d: &DepthMap) -> Result<()> {
    let mut buf = std::io::Cursor::new(Vec::new());
    depth_preview(d).to_image().write_to(&mut buf, image::ImageFormat::Png)?;
    atomic_write(path, buf.get_ref())
}

// ---------------------------------------------------------------- STSEG1

pub const LABEL_MAGIC: &[u8; 6] = b"STSEG1";

/// 16-byte header (magic, reserved u16, width u16, height u16, frames u32),
/// then one u32 LE label per pixel, frame-major and row-major.
pub fn encode_labels(l: &SegmentationLabelMap) -> Result<Vec<u8>> {
    if l.width() > u16::MAX as usize || l.height() > u16::MAX as usize {
        return Err(Error::format("STSEG1", "frame dimensions exceed 65535"));
    }
    let mut out = Vec::with_capacity(16 + l.labels().len() * 4);
    out.extend_from_slice(LABEL_MAGIC);
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(l.width() as u16).to_le_bytes());
    out.extend_from_slice(&(l.height() as u16).to_le_bytes());
    out.extend_from_slice(&(l.frame_count() as u32).to_le_bytes());
    for v in l.labels() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_labels(bytes: &[u8]) -> Result<SegmentationLabelMap> {
    const FMT: &str = "STSEG1";
    let mut r = ByteReader::new(bytes, FMT);
    if r.take(6)? != LABEL_MAGIC {
        return Err(Error::format(FMT, "bad magic"));
    }
    let _reserved = r.u16()?;
    let w = r.u16()? as usize;
    let h = r.u16()? as usize;
    let f = r.u32()? as usize;
    let n = w * h * f;
    if r.rest().len() != n * 4 {
        return Err(Error::format(FMT, format!("expected {} label bytes, found {}", n * 4, r.rest().len())));
    }
    let labels = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    SegmentationLabelMap::new(w, h, f, labels)
}

pub fn write_labels(path: &Path, l: &SegmentationLabelMap) -> Result<()> {
    atomic_write(path, &encode_labels(l)?)
}

pub fn read_labels(path: &Path) -> Result<SegmentationLabelMap> {
    decode_labels(&read_file(path)?)
}

// ---------------------------------------------------------------- .flo

pub const FLO_MAGIC: f32 = 202021.25;

pub fn encode_flo(f: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + f.u.len() * 8);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(f.width as i32).to_le_bytes());
    out.extend_from_slice(&(f.height as i32).to_le_bytes());
    for (u, v) in f.u.iter().zip(&f.v) {
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_flo(bytes: &[u8]) -> Result<FlowField> {
    const FMT: &str = "flo";
    let mut r = ByteReader::new(bytes, FMT);
    if r.f32()? != FLO_MAGIC {
        return Err(Error::format(FMT, "bad magic"));
    }
    let (w, h) = (r.i32()?, r.i32()?);
    if w <= 0 || h <= 0 {
        return Err(Error::format(FMT, format!("bad dimensions {w}x{h}")));
    }
    let n = w as usize * h as usize;
    if r.rest().len() != n * 8 {
        return Err(Error::format(FMT, format!("expected {} bytes of flow, found {}", n * 8, r.rest().len())));
    }
    let mut f = FlowField::zeros(w as usize, h as usize);
    for i in 0..n {
        f.u[i] = r.f32()?;
        f.v[i] = r.f32()?;
    }
    Ok(f)
}

pub fn write_flo(path: &Path, f: &FlowField) -> Result<()> {
    atomic_write(path, &encode_flo(f))
}

pub fn read_flo(path: &Path) -> Result<FlowField> {
    decode_flo(&read_file(path)?)
}

// ---------------------------------------------------------------- planes

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneRecord {
    pub region: u32,
    pub frame: usize,
    pub alpha: PlaneParams,
}

pub const PLANE_CSV_HEADER: &str = "region,frame,alpha1,alpha2,alpha3";

pub fn encode_planes_csv(records: &[PlaneRecord]) -> String {
    let mut s = String::from(PLANE_CSV_HEADER);
    s.push('\n');
    for r in records {
        let a = r.alpha.as_vector();
        s.push_str(&format!("{},{},{},{},{}\n", r.region, r.frame, a.x, a.y, a.z));
    }
    s
}

pub fn decode_planes_csv(text: &str) -> Result<Vec<PlaneRecord>> {
    const FMT: &str = "plane CSV";
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(PLANE_CSV_HEADER) {
        return Err(Error::format(FMT, "missing header"));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(n, line)| {
            let f: Vec<&str> = line.trim().split(',').collect();
            if f.len() != 5 {
                return Err(Error::format(FMT, format!("line {}: expected 5 fields", n + 2)));
            }
            let bad = |s: &str| Error::format(FMT, format!("line {}: bad value {s:?}", n + 2));
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(s));
            Ok(PlaneRecord {
                region: f[0].parse().map_err(|_| bad(f[0]))?,
                frame: f[1].parse().map_err(|_| bad(f[1]))?,
                alpha: PlaneParams::new(num(f[2])?, num(f[3])?, num(f[4])?),
            })
        })
        .collect()
}

pub fn write_planes_csv(path: &Path, records: &[PlaneRecord]) -> Result<()> {
    atomic_write(path, encode_planes_csv(records).as_bytes())
}

pub fn read_planes_csv(path: &Path) -> Result<Vec<PlaneRecord>> {
    let bytes = read_file(path)?;
    decode_planes_csv(std::str::from_utf8(&bytes).map_err(|_| Error::format("plane CSV", "not UTF-8"))?)
}

// ---------------------------------------------------------------- confidence maps

pub const GC_MAGIC: &[u8; 6] = b"GCMAP1";

/// Geometric-context confidences for a video: 24-byte header (magic,
/// reserved u16, width u32, height u32, frames u32, classes u32) followed by
/// f32 LE values ordered frame, pixel, class.
pub fn encode_gc_maps(maps: &[GeometricContextMap]) -> Result<Vec<u8>> {
    let first = maps.first().ok_or(Error::EmptyInput("no confidence maps"))?;
    let (w, h) = (first.width, first.height);
    let mut out = Vec::new();
    out.extend_from_slice(GC_MAGIC);
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(maps.len() as u32).to_le_bytes());
    out.extend_from_slice(&(crate::features::GC_CLASSES as u32).to_le_bytes());
    for m in maps {
        if m.width != w || m.height != h {
            return Err(Error::dims(format!("{w}x{h}"), format!("{}x{}", m.width, m.height)));
        }
        for px in &m.conf {
            for c in px {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode_gc_maps(bytes: &[u8]) -> Result<Vec<GeometricContextMap>> {
    const FMT: &str = "GCMAP1";
    let mut r = ByteReader::new(bytes, FMT);
    if r.take(6)? != GC_MAGIC {
        return Err(Error::format(FMT, "bad magic"));
    }
    let _ = r.u16()?;
    let (w, h, f, c) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    if c != crate::features::GC_CLASSES {
        return Err(Error::format(FMT, format!("expected 5 classes, found {c}")));
    }
    if r.rest().len() != w * h * f * c * 4 {
        return Err(Error::format(FMT, "raster size does not match header"));
    }
    (0..f)
        .map(|_| {
            let conf = (0..w * h)
                .map(|_| {
                    let mut px = [0f32; 5];
                    for v in px.iter_mut() {
                        *v = r.f32()?;
                    }
                    Ok(px)
                })
                .collect::<Result<Vec<_>>>()?;
            GeometricContextMap::new(w, h, conf)
        })
        .collect()
}

pub fn write_gc_maps(path: &Path, maps: &[GeometricContextMap]) -> Result<()> {
    atomic_write(path, &encode_gc_maps(maps)?)
}

pub fn read_gc_maps(path: &Path) -> Result<Vec<GeometricContextMap>> {
    decode_gc_maps(&read_file(path)?)
}

// ---------------------------------------------------------------- point clouds

/// Whitespace-delimited `x y z` per line; `#` starts a comment.
pub fn parse_xyz(text: &str) -> Result<Vec<Vector3<f64>>> {
    text.lines()
        .enumerate()
        .filter_map(|(n, l)| {
            let l = l.split('#').next().unwrap_or("").trim();
            (!l.is_empty()).then_some((n, l))
        })
        .map(|(n, l)| {
            let v: Vec<f64> = l
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::format("XYZ", format!("line {}: not numeric", n + 1)))?;
            if v.len() != 3 {
                return Err(Error::format("XYZ", format!("line {}: expected 3 values", n + 1)));
            }
            Ok(Vector3::new(v[0], v[1], v[2]))
        })
        .collect()
}

pub fn format_xyz(points: &[Vector3<f64>]) -> String {
    points.iter().map(|p| format!("{} {} {}\n", p.x, p.y, p.z)).collect()
}

/// Packed little-endian f32 triples.
pub fn decode_points_f32(bytes: &[u8]) -> Result<Vec<Vector3<f64>>> {
    if bytes.len() % 12 != 0 {
        return Err(Error::format("packed f32 points", "length is not a multiple of 12"));
    }
    Ok(bytes
        .chunks_exact(12)
        .map(|c| {
            let f = |i: usize| f32::from_le_bytes(c[i..i + 4].try_into().unwrap()) as f64;
            Vector3::new(f(0), f(4), f(8))
        })
        .collect())
}

pub fn encode_points_f32(points: &[Vector3<f64>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(points.len() * 12);
    for p in points {
        for v in [p.x, p.y, p.z] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

/// Reads `.xyz`/`.txt` as text and anything else as packed f32.
pub fn read_points(path: &Path) -> Result<Vec<Vector3<f64>>> {
    let bytes = read_file(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("xyz") | Some("txt") => parse_xyz(std::str::from_utf8(&bytes).map_err(|_| Error::format("XYZ", "not UTF-8"))?),
        _ => decode_points_f32(&bytes),
    }
}

// ---------------------------------------------------------------- feature tables

/// Named numeric columns, one row per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureTable {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

pub fn encode_feature_csv(t: &FeatureTable) -> String {
    let mut s = t.columns.join(",");
    s.push('\n');
    for r in &t.rows {
        let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

pub fn decode_feature_csv(text: &str) -> Result<FeatureTable> {
    const FMT: &str = "feature CSV";
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::format(FMT, "missing header"))?;
    let columns: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let rows = lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(n, l)| {
            let r: Vec<f64> = l
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::format(FMT, format!("row {}: not numeric", n + 1)))?;
            if r.len() != columns.len() {
                return Err(Error::format(FMT, format!("row {}: {} values for {} columns", n + 1, r.len(), columns.len())));
            }
            Ok(r)
        })
        .collect::<Result<_>>()?;
    Ok(FeatureTable { columns, rows })
}

pub fn write_feature_csv(path: &Path, t: &FeatureTable) -> Result<()> {
    atomic_write(path, encode_feature_csv(t).as_bytes())
}

pub fn read_feature_csv(path: &Path) -> Result<FeatureTable> {
    let bytes = read_file(path)?;
    decode_feature_csv(std::str::from_utf8(&bytes).map_err(|_| Error::format("feature CSV", "not UTF-8"))?)
}

#[derive(Serialize, Deserialize)]
struct FeatureSidecar {
    rows: usize,
    cols: usize,
    dtype: String,
    layout: String,
    columns: Vec<String>,
}

/// Row-major f32 LE matrix at `path`, schema in `path` with a `.json`
/// extension.
pub fn write_feature_bin(path: &Path, t: &FeatureTable) -> Result<()> {
    let mut bytes = Vec::with_capacity(t.rows.len() * t.columns.len() * 4);
    for r in &t.rows {
        for v in r {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    let sidecar = FeatureSidecar {
        rows: t.rows.len(),
        cols: t.columns.len(),
        dtype: "f32le".into(),
        layout: "row-major".into(),
        columns: t.columns.clone(),
    };
    atomic_write(&path.with_extension("json"), &serde_json::to_vec_pretty(&sidecar)?)?;
    atomic_write(path, &bytes)
}

pub fn read_feature_bin(path: &Path) -> Result<FeatureTable> {
    let sidecar: FeatureSidecar = serde_json::from_slice(&read_file(&path.with_extension("json"))?)?;
    if sidecar.dtype != "f32le" || sidecar.columns.len() != sidecar.cols {
        return Err(Error::format("feature binary", "unsupported sidecar"));
    }
    let bytes = read_file(path)?;
    if bytes.len() != sidecar.rows * sidecar.cols * 4 {
        return Err(Error::format("feature binary", "size does not match sidecar"));
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(FeatureTable {
        columns: sidecar.columns,
        rows: vals.chunks(sidecar.cols.max(1)).map(|c| c.to_vec()).collect(),
    })
}

// ---------------------------------------------------------------- frame sequences

pub fn frame_name(t: usize, ext: &str) -> String {
    format!("frame_{t:06}.{ext}")
}

/// Numbered files `frame_NNNNNN.<ext>` in `dir`, sorted by number.
pub fn numbered_files(dir: &Path, exts: &[&str]) -> Result<Vec<PathBuf>> {
    let mut out: Vec<(usize, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        let (Some(stem), Some(ext)) = (
            p.file_stem().and_then(|s| s.to_str()),
            p.extension().and_then(|s| s.to_str()),
        ) else {
            continue;
        };
        if !exts.contains(&ext) {
            continue;
        }
        if let Some(n) = stem.strip_prefix("frame_").and_then(|n| n.parse::<usize>().ok()) {
            out.push((n, p));
        }
    }
    out.sort();
    Ok(out.into_iter().map(|(_, p)| p).collect())
}

pub fn write_frames(dir: &Path, video: &VideoVolume) -> Result<()> {
    for (t, f) in video.frames().iter().enumerate() {
        let mut buf = std::io::Cursor::new(Vec::new());
        f.to_image().write_to(&mut buf, image::ImageFormat::Png)?;
        atomic_write(&dir.join(frame_name(t, "png")), buf.get_ref())?;
    }
    Ok(())
}

pub fn read_frames(dir: &Path) -> Result<VideoVolume> {
    let files = numbered_files(dir, &["png", "ppm"])?;
    if files.is_empty() {
        return Err(Error::EmptyInput("no frame_NNNNNN.png/.ppm files"));
    }
    let frames = files
        .iter()
        .map(|p| {
            let img = image::open(p)?.to_rgb8();
            Ok(RgbFrame::from_image(&img))
        })
        .collect::<Result<Vec<_>>>()?;
    VideoVolume::new(frames)
}

pub fn write_depth_sequence(dir: &Path, maps: &[DepthMap]) -> Result<()> {
    for (t, d) in maps.iter().enumerate() {
        write_depth_pfm(&dir.join(frame_name(t, "pfm")), d)?;
    }
    Ok(())
}

pub fn read_depth_sequence(dir: &Path) -> Result<Vec<DepthMap>> {
    let files = numbered_files(dir, &["pfm"])?;
    if files.is_empty() {
        return Err(Error::EmptyInput("no frame_NNNNNN.pfm depth files"));
    }
    files.iter().map(|p| read_depth_pfm(p)).collect()
}

/// Backward flow fields: `flow_NNNNNN.flo` maps frame N+1 to frame N.
pub fn write_flow_sequence(dir: &Path, flows: &[FlowField]) -> Result<()> {
    for (t, f) in flows.iter().enumerate() {
        write_flo(&dir.join(format!("flow_{t:06}.flo")), f)?;
    }
    Ok(())
}

pub fn read_flow_sequence(dir: &Path, count: usize) -> Result<Vec<FlowField>> {
    (0..count)
        .map(|t| read_flo(&dir.join(format!("flow_{t:06}.flo"))))
        .collect()
}
