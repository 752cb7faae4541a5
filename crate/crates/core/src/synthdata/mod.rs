//! Procedural line-scene generation and the augmentation suite, with ground
//! truth transformed alongside every geometric change.
//!
//! Images are `[H, W, 3]` arrays with values in `[0, 1]`; pixel `(row, col)`
//! covers `[col, col + 1) × [row, row + 1)` in continuous coordinates.

mod augment;
mod background;
mod elastic;
mod geometric;
mod io;
mod photometric;
mod scene;

pub use augment::{make_offline_set, on_the_fly_augment, AppliedOps, AugmentConfig, OfflineConfig};
pub use background::{procedural_background, BackgroundKind, BackgroundSource};
pub use elastic::{elastic_transform, ElasticField};
pub use geometric::{flip_horizontal, flip_vertical, zoom_rotate_flip, GeometricParams};
pub use io::{
    generate_dataset, load_rgb_png, read_manifest, resize_image, save_rgb_png, write_manifest, Dataset,
    ManifestRecord,
};
pub use photometric::{
    add_gaussian_noise, apply_color, color_jitter, gaussian_blur, grayscale_rgb, ColorFactors, ColorJitter,
};
pub use scene::{render_scene, SceneParams, SceneRenderer};

use ndarray::{Array2, Array3};
use rand::Rng;

use crate::gridcodec::LineSegment;

/// Cable layer kept by the renderer so a scene can be re-composited over a
/// different background: `[H, W, 4]` holding stroke color (RGB) and
/// coverage alpha.
pub type StrokeLayer = Array3<f32>;

/// One annotated image.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub image: Array3<f32>,
    pub segments: Vec<LineSegment>,
    pub seed: u64,
    pub provenance: String,
    pub stroke: Option<StrokeLayer>,
}

impl SampleRecord {
    pub fn new(image: Array3<f32>, segments: Vec<LineSegment>, seed: u64, provenance: impl Into<String>) -> Self {
        Self {
            image,
            segments,
            seed,
            provenance: provenance.into(),
            stroke: None,
        }
    }

    pub fn width(&self) -> usize {
        self.image.dim().1
    }

    pub fn height(&self) -> usize {
        self.image.dim().0
    }

    /// Pixels where the stroke is at least half opaque (`alpha > 0.5`).
    pub fn visible_cable_mask(&self) -> Option<Array2<bool>> {
        self.stroke
            .as_ref()
            .map(|s| s.index_axis(ndarray::Axis(2), 3).mapv(|a| a > 0.5))
    }
}

/// Uniform draw from an inclusive `[lo, hi]` range; degenerate ranges return
/// `lo` without consuming randomness.
pub(crate) fn sample_range<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[1] <= r[0] {
        r[0]
    } else {
        rng.random_range(r[0]..=r[1])
    }
}

pub(crate) fn check_range(name: &str, r: [f64; 2], lo: f64, hi: f64) -> crate::Result<()> {
    if !(r[0].is_finite() && r[1].is_finite()) || r[0] > r[1] || r[0] < lo || r[1] > hi {
        return Err(crate::Error::Config(format!(
            "{name} range [{}, {}] must be ordered and within [{lo}, {hi}]",
            r[0], r[1]
        )));
    }
    Ok(())
}

pub(crate) fn check_probability(name: &str, p: f64) -> crate::Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(crate::Error::Config(format!("{name} must be a probability, got {p}")));
    }
    Ok(())
}

/// Bilinear sample of channel `c` at continuous point `(x, y)`, clamping to
/// the edge pixels.
pub(crate) fn bilinear(img: &Array3<f32>, x: f64, y: f64, c: usize) -> f32 {
    let (h, w, _) = img.dim();
    let u = (x - 0.5).clamp(0.0, (w - 1) as f64);
    let v = (y - 0.5).clamp(0.0, (h - 1) as f64);
    let (j0, i0) = (u.floor() as usize, v.floor() as usize);
    let (j1, i1) = ((j0 + 1).min(w - 1), (i0 + 1).min(h - 1));
    let (fx, fy) = ((u - j0 as f64) as f32, (v - i0 as f64) as f32);
    let top = img[[i0, j0, c]] * (1.0 - fx) + img[[i0, j1, c]] * fx;
    let bot = img[[i1, j0, c]] * (1.0 - fx) + img[[i1, j1, c]] * fx;
    top * (1.0 - fy) + bot * fy
}

/// Clips each segment to `[0, w] × [0, h]`, dropping those that vanish.
pub(crate) fn clip_to_image(segments: impl IntoIterator<Item = LineSegment>, w: usize, h: usize) -> Vec<LineSegment> {
    let bx = crate::gridcodec::CellBox::new(0.0, 0.0, w as f64, h as f64);
    segments
        .into_iter()
        .filter_map(|s| crate::gridcodec::clip_segment_to_box(&s, &bx))
        .collect()
}

/// Alpha-composites a stroke layer over `background`.
pub fn composite(background: &Array3<f32>, stroke: &StrokeLayer) -> Array3<f32> {
    let mut out = background.clone();
    let (h, w, _) = out.dim();
    for i in 0..h {
        for j in 0..w {
            let a = stroke[[i, j, 3]];
            if a > 0.0 {
                for c in 0..3 {
                    out[[i, j, c]] = out[[i, j, c]] * (1.0 - a) + stroke[[i, j, c]] * a;
                }
            }
        }
    }
    out
}
