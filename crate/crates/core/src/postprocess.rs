//! Segment lists to pixel-level maps: 8-connected Bresenham rasterization
//! with square dilation, max-confidence accumulation, Gaussian smoothing and
//! Otsu or fixed-threshold binarization.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter;
use crate::gridcodec::LineSegment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    Confidence,
    Binary,
}

/// A per-pixel map, `values[[row, col]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationMap {
    pub values: Array2<f32>,
    pub kind: MapKind,
}

impl SegmentationMap {
    pub fn zeros(width: usize, height: usize, kind: MapKind) -> Self {
        Self {
            values: Array2::zeros((height, width)),
            kind,
        }
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    pub fn height(&self) -> usize {
        self.values.nrows()
    }

    /// Writes the map as an 8-bit grayscale PNG (`round_half_up(v · 255)`).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (h, w) = self.values.dim();
        let buf: Vec<u8> = self.values.iter().map(|&v| to_u8(v)).collect();
        let img = image::GrayImage::from_raw(w as u32, h as u32, buf)
            .ok_or_else(|| Error::Shape("map buffer does not match its dimensions".into()))?;
        img.save(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

pub(crate) fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Pixel containing a continuous coordinate, clamped into `[0, n − 1]`.
pub fn pixel_of(v: f64, n: usize) -> i64 {
    (v.floor() as i64).clamp(0, n as i64 - 1)
}

/// 8-connected Bresenham line from `p0` to `p1`, both endpoints included.
///
/// The line is always traced from a canonical endpoint (smaller major-axis
/// coordinate; for the `x`-major case `|dx| ≥ |dy|`) and reversed when the
/// caller's order differs, so `bresenham_8(a, b)` is exactly the reverse of
/// `bresenham_8(b, a)`. On exact half-pixel ties the minor coordinate stays
/// on the side of the canonical start.
pub fn bresenham_8(p0: (i64, i64), p1: (i64, i64)) -> Vec<(i64, i64)> {
    let dx = (p1.0 - p0.0).abs();
    let dy = (p1.1 - p0.1).abs();
    let x_major = dx >= dy;
    let reversed = if x_major {
        p1.0 < p0.0
    } else {
        p1.1 < p0.1
    };
    let (a, b) = if reversed { (p1, p0) } else { (p0, p1) };
    let mut pts = Vec::with_capacity(dx.max(dy) as usize + 1);
    if x_major {
        let sy = if b.1 >= a.1 { 1 } else { -1 };
        let mut y = a.1;
        let mut err = 2 * dy - dx;
        for x in a.0..=b.0 {
            pts.push((x, y));
            if err > 0 {
                y += sy;
                err -= 2 * dx;
            }
            err += 2 * dy;
        }
    } else {
        let sx = if b.0 >= a.0 { 1 } else { -1 };
        let mut x = a.0;
        let mut err = 2 * dx - dy;
        for y in a.1..=b.1 {
            pts.push((x, y));
            if err > 0 {
                x += sx;
                err -= 2 * dy;
            }
            err += 2 * dx;
        }
    }
    if reversed {
        pts.reverse();
    }
    pts
}

/// Offsets covered by a width-`w` square structuring element.
///
/// Odd widths are centered; even widths put the extra pixel toward
/// `+x`/`+y` (element anchored at the top-left of its central 2×2 block).
pub fn dilation_offsets(width: usize) -> std::ops::RangeInclusive<i64> {
    let w = width.max(1) as i64;
    -((w - 1) / 2)..=(w / 2)
}

/// Pixel set of one segment: Bresenham line dilated by a `width × width` square.
pub fn segment_pixels(seg: &LineSegment, width: usize, img_w: usize, img_h: usize) -> Vec<(usize, usize)> {
    let p0 = (pixel_of(seg.x1, img_w), pixel_of(seg.y1, img_h));
    let p1 = (pixel_of(seg.x2, img_w), pixel_of(seg.y2, img_h));
    let line = bresenham_8(p0, p1);
    if width <= 1 {
        return line.into_iter().map(|(x, y)| (x as usize, y as usize)).collect();
    }
    let mut out = Vec::with_capacity(line.len() * width * width);
    let offs = dilation_offsets(width);
    for (x, y) in line {
        for oy in offs.clone() {
            let yy = y + oy;
            if yy < 0 || yy >= img_h as i64 {
                continue;
            }
            for ox in offs.clone() {
                let xx = x + ox;
                if xx < 0 || xx >= img_w as i64 {
                    continue;
                }
                out.push((xx as usize, yy as usize));
            }
        }
    }
    out
}

/// Confidence map: each covered pixel takes the maximum confidence of the
/// segments covering it (segments without confidence count as 1), every
/// other pixel is 0.
pub fn rasterize_segments(segments: &[LineSegment], width: usize, img_w: usize, img_h: usize) -> SegmentationMap {
    let mut map = SegmentationMap::zeros(img_w, img_h, MapKind::Confidence);
    for seg in segments {
        let conf = seg.confidence.unwrap_or(1.0).clamp(0.0, 1.0) as f32;
        for (x, y) in segment_pixels(seg, width, img_w, img_h) {
            let v = &mut map.values[[y, x]];
            if conf > *v {
                *v = conf;
            }
        }
    }
    map
}

/// Gaussian smoothing of a confidence map. `sigma == 0` leaves it untouched.
pub fn smooth_map(map: &SegmentationMap, sigma: f64, kernel_size: usize) -> Result<SegmentationMap> {
    let mut out = map.clone();
    if sigma == 0.0 {
        if kernel_size % 2 == 0 {
            return Err(Error::Config(format!(
                "smoothing kernel size must be odd, got {kernel_size}"
            )));
        }
        return Ok(out);
    }
    filter::gaussian_blur_plane(out.values.view_mut(), sigma, kernel_size)?;
    out.values.mapv_inplace(|v| v.clamp(0.0, 1.0));
    Ok(out)
}

/// Histogram bin of a `[0, 1]` value on the 256-level scale.
pub fn quantize(v: f32) -> usize {
    to_u8(v) as usize
}

/// Between-class variance score of splitting at bin `t` (classes `≤ t` and
/// `> t`), scaled by `N²`: `(s0·n1 − s1·n0)² / (n0·n1)`, as an exact
/// rational `(numerator, denominator)`. `None` when a class is empty.
fn split_score(n0: u64, s0: u64, n1: u64, s1: u64) -> Option<(u128, u128)> {
    if n0 == 0 || n1 == 0 {
        return None;
    }
    let a = s0 as i128 * n1 as i128 - s1 as i128 * n0 as i128;
    Some(((a * a) as u128, n0 as u128 * n1 as u128))
}

fn better(a: (u128, u128), b: (u128, u128)) -> bool {
    // a.0 / a.1 > b.0 / b.1
    let lhs = a.0.checked_mul(b.1);
    let rhs = b.0.checked_mul(a.1);
    match (lhs, rhs) {
        (Some(l), Some(r)) => l > r,
        _ => (a.0 as f64 / a.1 as f64) > (b.0 as f64 / b.1 as f64),
    }
}

/// Otsu threshold over the 256-bin histogram of `map`.
///
/// Returns the binary map (1 where the quantized value exceeds the threshold
/// bin) and the threshold as a `[0, 1]` value (`bin / 255`). Ties between
/// thresholds go to the lowest. A constant map yields its own value as the
/// threshold and an all-zero output.
pub fn otsu_binarize(map: &SegmentationMap) -> (SegmentationMap, f32) {
    let mut hist = [0u64; 256];
    for &v in map.values.iter() {
        hist[quantize(v)] += 1;
    }
    let t = otsu_bin(&hist);
    let out = map.values.mapv(|v| if quantize(v) > t { 1.0 } else { 0.0 });
    (
        SegmentationMap {
            values: out,
            kind: MapKind::Binary,
        },
        t as f32 / 255.0,
    )
}

/// Otsu bin for a histogram; degenerate (single-bin) histograms return that bin.
pub fn otsu_bin(hist: &[u64; 256]) -> usize {
    let total_n: u64 = hist.iter().sum();
    let total_s: u64 = hist.iter().enumerate().map(|(i, &h)| i as u64 * h).sum();
    let mut n0 = 0u64;
    let mut s0 = 0u64;
    let mut best: Option<((u128, u128), usize)> = None;
    for (t, &h) in hist.iter().enumerate() {
        n0 += h;
        s0 += t as u64 * h;
        if let Some(score) = split_score(n0, s0, total_n - n0, total_s - s0) {
            if best.is_none_or(|(b, _)| better(score, b)) {
                best = Some((score, t));
            }
        }
    }
    match best {
        Some((_, t)) => t,
        None => hist.iter().position(|&h| h > 0).unwrap_or(0),
    }
}

/// 1 where the value strictly exceeds `t`.
pub fn fixed_binarize(map: &SegmentationMap, t: f32) -> SegmentationMap {
    SegmentationMap {
        values: map.values.mapv(|v| if v > t { 1.0 } else { 0.0 }),
        kind: MapKind::Binary,
    }
}

/// How confidence maps are turned into binary maps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Binarization {
    Otsu,
    Fixed(f32),
}

impl Binarization {
    pub fn apply(&self, map: &SegmentationMap) -> SegmentationMap {
        match *self {
            Binarization::Otsu => otsu_binarize(map).0,
            Binarization::Fixed(t) => fixed_binarize(map, t),
        }
    }
}

impl std::str::FromStr for Binarization {
    type Err = Error;

    /// `otsu` or `fixed:<t>`.
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("otsu") {
            return Ok(Binarization::Otsu);
        }
        if let Some(rest) = s.strip_prefix("fixed:") {
            let t: f32 = rest
                .parse()
                .map_err(|_| Error::Config(format!("bad fixed threshold \"{rest}\"")))?;
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("fixed threshold {t} outside [0, 1]")));
            }
            return Ok(Binarization::Fixed(t));
        }
        Err(Error::Config(format!(
            "unknown binarization \"{s}\" (expected otsu or fixed:<t>)"
        )))
    }
}

impl std::fmt::Display for Binarization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Binarization::Otsu => write!(f, "otsu"),
            Binarization::Fixed(t) => write!(f, "fixed:{t}"),
        }
    }
}

impl Serialize for Binarization {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Binarization {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
