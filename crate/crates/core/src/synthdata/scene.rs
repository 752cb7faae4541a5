use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::background::{BackgroundPool, BackgroundSource};
use super::{check_range, clip_to_image, composite, sample_range, SampleRecord, StrokeLayer};
use crate::error::{Error, Result};
use crate::filter;
use crate::gridcodec::LineSegment;
use crate::postprocess::segment_pixels;

/// Distribution of procedural cable scenes. Ranges are inclusive `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneParams {
    pub n_cables: [usize; 2],
    /// Maximum mid-span deflection in pixels; each cable draws its own in
    /// `[0, sag]`.
    pub sag: f64,
    /// Straight pieces per cable.
    pub polyline_steps: usize,
    pub cable_width: [f64; 2],
    /// Gray level of the cable color.
    pub cable_intensity: [f64; 2],
    /// Distance between neighbouring cables, pixels.
    pub spacing: [f64; 2],
    /// Cable orientation, radians from the +x axis.
    pub angle: [f64; 2],
    pub background: BackgroundSource,
    /// Out-of-focus blur of the background (Gaussian σ, pixels; 0 = sharp).
    pub background_blur: [f64; 2],
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            n_cables: [1, 4],
            sag: 12.0,
            polyline_steps: 8,
            cable_width: [2.0, 4.0],
            cable_intensity: [0.02, 0.3],
            spacing: [16.0, 64.0],
            angle: [0.0, std::f64::consts::PI],
            background: BackgroundSource::Procedural,
            background_blur: [0.0, 1.5],
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_cables[0] > self.n_cables[1] {
            return Err(Error::Config(format!(
                "n_cables range [{}, {}] is empty",
                self.n_cables[0], self.n_cables[1]
            )));
        }
        if self.polyline_steps == 0 {
            return Err(Error::Config("polyline_steps must be at least 1".into()));
        }
        if !(self.sag >= 0.0 && self.sag.is_finite()) {
            return Err(Error::Config(format!("sag must be non-negative, got {}", self.sag)));
        }
        check_range("cable_width", self.cable_width, 0.0, f64::MAX)?;
        if self.cable_width[0] <= 0.0 {
            return Err(Error::Config("cable_width must be positive".into()));
        }
        check_range("cable_intensity", self.cable_intensity, 0.0, 1.0)?;
        check_range("spacing", self.spacing, 0.0, f64::MAX)?;
        check_range("angle", self.angle, f64::MIN, f64::MAX)?;
        check_range("background_blur", self.background_blur, 0.0, f64::MAX)?;
        Ok(())
    }
}

/// Renders scenes with a background pool loaded once.
#[derive(Debug, Clone)]
pub struct SceneRenderer {
    params: SceneParams,
    pool: BackgroundPool,
}

impl SceneRenderer {
    pub fn new(params: SceneParams) -> Result<Self> {
        params.validate()?;
        let pool = params.background.load()?;
        Ok(Self { params, pool })
    }

    pub fn params(&self) -> &SceneParams {
        &self.params
    }

    pub(crate) fn background<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Array3<f32> {
        let mut bg = self.pool.sample(size, rng);
        let sigma = sample_range(rng, self.params.background_blur);
        if sigma > 0.0 {
            let k = filter::gaussian_kernel_1d(sigma, filter::kernel_size_for(sigma)).expect("valid blur");
            for mut plane in bg.axis_iter_mut(ndarray::Axis(2)) {
                filter::convolve_separable(plane.view_mut(), &k);
            }
        }
        bg
    }

    /// Renders one `size × size` scene; deterministic in `seed`.
    pub fn render(&self, size: usize, seed: u64) -> Result<SampleRecord> {
        if size == 0 {
            return Err(Error::Config("scene size must be positive".into()));
        }
        let p = &self.params;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let background = self.background(size, &mut rng);
        let s = size as f64;
        let n = rng.random_range(p.n_cables[0]..=p.n_cables[1]);
        let theta = sample_range(&mut rng, p.angle);
        let (u, mut nrm) = ((theta.cos(), theta.sin()), (-theta.sin(), theta.cos()));
        if nrm.1 < 0.0 {
            nrm = (-nrm.0, -nrm.1);
        }
        let spacings: Vec<f64> = (1..n).map(|_| sample_range(&mut rng, p.spacing)).collect();
        let extent: f64 = spacings.iter().sum();
        let half = s / 2.0;
        let first = if extent < s {
            rng.random_range(-half..=half - extent)
        } else {
            -extent / 2.0
        };
        let mut stroke = StrokeLayer::zeros((size, size, 4));
        let mut segments = Vec::new();
        let mut offset = first;
        for k in 0..n {
            if k > 0 {
                offset += spacings[k - 1];
            }
            let width = sample_range(&mut rng, p.cable_width);
            let gray = sample_range(&mut rng, p.cable_intensity) as f32;
            let tint: [f32; 3] = std::array::from_fn(|_| rng.random_range(-0.03f32..=0.03));
            let color: [f32; 3] = std::array::from_fn(|c| (gray + tint[c]).clamp(0.0, 1.0));
            let sag = if p.sag > 0.0 { rng.random_range(0.0..=p.sag) } else { 0.0 };
            let c = (half + offset * nrm.0, half + offset * nrm.1);
            let far = LineSegment::new(c.0 - s * u.0, c.1 - s * u.1, c.0 + s * u.0, c.1 + s * u.1);
            let Some(chord) = clip_to_image([far], size, size).pop() else {
                continue;
            };
            let pieces = cable_polyline(&chord, sag, nrm, p.polyline_steps);
            let pieces = clip_to_image(pieces, size, size);
            draw_stroke(&mut stroke, &pieces, width, color);
            segments.extend(pieces);
        }
        let image = composite(&background, &stroke);
        Ok(SampleRecord {
            image,
            segments,
            seed,
            provenance: "procedural".into(),
            stroke: Some(stroke),
        })
    }
}

/// Renders one scene; see [`SceneRenderer::render`].
pub fn render_scene(params: &SceneParams, size: usize, seed: u64) -> Result<SampleRecord> {
    SceneRenderer::new(params.clone())?.render(size, seed)
}

/// Quadratic curve from the chord endpoints with its midpoint displaced by
/// `sag` along `normal`, split into `steps` straight pieces.
fn cable_polyline(chord: &LineSegment, sag: f64, normal: (f64, f64), steps: usize) -> Vec<LineSegment> {
    let (ax, ay, bx, by) = (chord.x1, chord.y1, chord.x2, chord.y2);
    let (mx, my) = ((ax + bx) / 2.0, (ay + by) / 2.0);
    let (cx, cy) = (mx + 2.0 * sag * normal.0, my + 2.0 * sag * normal.1);
    let at = |t: f64| {
        let (a, b, c) = ((1.0 - t) * (1.0 - t), 2.0 * t * (1.0 - t), t * t);
        (a * ax + b * cx + c * bx, a * ay + b * cy + c * by)
    };
    (0..steps)
        .map(|i| {
            let (p0, p1) = (at(i as f64 / steps as f64), at((i + 1) as f64 / steps as f64));
            LineSegment::new(p0.0, p0.1, p1.0, p1.1)
        })
        .collect()
}

fn point_segment_distance(px: f64, py: f64, s: &LineSegment) -> f64 {
    let (dx, dy) = (s.x2 - s.x1, s.y2 - s.y1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((px - s.x1) * dx + (py - s.y1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((px - s.x1 - t * dx).powi(2) + (py - s.y1 - t * dy).powi(2)).sqrt()
}

/// Anti-aliased stroke: coverage `clamp(w/2 + 0.5 − d, 0, 1)` with `d` the
/// distance from the pixel center to the polyline, restricted to the pixels
/// of the polyline rasterized at width `round(w)`, so every drawn pixel lies
/// on the ground-truth raster.
fn draw_stroke(stroke: &mut StrokeLayer, pieces: &[LineSegment], width: f64, color: [f32; 3]) {
    let (h, w, _) = stroke.dim();
    let raster_width = (width.round() as usize).max(1);
    let mut footprint = Array2::from_elem((h, w), false);
    for s in pieces {
        for (x, y) in segment_pixels(s, raster_width, w, h) {
            footprint[[y, x]] = true;
        }
    }
    let reach = width / 2.0 + 0.5;
    for s in pieces {
        let x0 = (s.x1.min(s.x2) - reach).floor().max(0.0) as usize;
        let x1 = ((s.x1.max(s.x2) + reach).ceil() as usize).min(w);
        let y0 = (s.y1.min(s.y2) - reach).floor().max(0.0) as usize;
        let y1 = ((s.y1.max(s.y2) + reach).ceil() as usize).min(h);
        for i in y0..y1 {
            for j in x0..x1 {
                if !footprint[[i, j]] {
                    continue;
                }
                let d = point_segment_distance(j as f64 + 0.5, i as f64 + 0.5, s);
                let a = (reach - d).clamp(0.0, 1.0) as f32;
                if a > stroke[[i, j, 3]] {
                    stroke[[i, j, 3]] = a;
                    for c in 0..3 {
                        stroke[[i, j, c]] = color[c];
                    }
                }
            }
        }
    }
}
