use ndarray::{Array3, Axis};
use rand::Rng;

use super::{bilinear, clip_to_image};
use crate::error::{Error, Result};
use crate::gridcodec::LineSegment;

/// A rotation about the image center, then a crop rescaled to full size,
/// then flips.
///
/// Rotation by `theta` is counter-clockwise as seen on screen: a point
/// `(x, y)` moves to `(cx + c·(x−cx) + s·(y−cy), cy − s·(x−cx) + c·(y−cy))`,
/// so a quarter turn maps `(x, y)` to `(y, S − x)` on a square image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricParams {
    pub theta: f64,
    pub crop_fraction: f64,
    /// Top-left corner of the crop window in rotated-image pixels.
    pub crop_origin: (f64, f64),
    pub flip_h: bool,
    pub flip_v: bool,
}

impl GeometricParams {
    pub fn identity() -> Self {
        Self {
            theta: 0.0,
            crop_fraction: 1.0,
            crop_origin: (0.0, 0.0),
            flip_h: false,
            flip_v: false,
        }
    }

    /// Draws the crop origin uniformly among windows inside the image.
    pub fn with_random_crop<R: Rng + ?Sized>(
        theta: f64,
        crop_fraction: f64,
        flip_h: bool,
        flip_v: bool,
        w: usize,
        h: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if !(crop_fraction > 0.0 && crop_fraction <= 1.0) {
            return Err(Error::Config(format!("crop fraction must lie in (0, 1], got {crop_fraction}")));
        }
        let slack_x = w as f64 * (1.0 - crop_fraction);
        let slack_y = h as f64 * (1.0 - crop_fraction);
        let x0 = if slack_x > 0.0 { rng.random_range(0.0..=slack_x) } else { 0.0 };
        let y0 = if slack_y > 0.0 { rng.random_range(0.0..=slack_y) } else { 0.0 };
        Ok(Self {
            theta,
            crop_fraction,
            crop_origin: (x0, y0),
            flip_h,
            flip_v,
        })
    }

    fn resamples(&self) -> bool {
        self.theta != 0.0 || self.crop_fraction != 1.0 || self.crop_origin != (0.0, 0.0)
    }

    /// Forward map of a point through rotation and crop (flips excluded).
    fn map_point(&self, x: f64, y: f64, w: usize, h: usize) -> (f64, f64) {
        if !self.resamples() {
            return (x, y);
        }
        let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
        let (s, c) = self.theta.sin_cos();
        let (rx, ry) = (cx + c * (x - cx) + s * (y - cy), cy - s * (x - cx) + c * (y - cy));
        (
            (rx - self.crop_origin.0) / self.crop_fraction,
            (ry - self.crop_origin.1) / self.crop_fraction,
        )
    }

    fn inverse_point(&self, x: f64, y: f64, w: usize, h: usize) -> (f64, f64) {
        let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
        let (rx, ry) = (
            x * self.crop_fraction + self.crop_origin.0,
            y * self.crop_fraction + self.crop_origin.1,
        );
        let (s, c) = self.theta.sin_cos();
        (cx + c * (rx - cx) - s * (ry - cy), cy + s * (rx - cx) + c * (ry - cy))
    }

    /// Transforms an image of any channel count. Output pixels whose source
    /// lies outside the input take `fill[channel]`.
    pub fn apply_image(&self, img: &Array3<f32>, fill: &[f32]) -> Array3<f32> {
        let (h, w, ch) = img.dim();
        let mut out = if self.resamples() {
            Array3::from_shape_fn((h, w, ch), |(i, j, k)| {
                let (x, y) = self.inverse_point(j as f64 + 0.5, i as f64 + 0.5, w, h);
                if x < 0.0 || y < 0.0 || x > w as f64 || y > h as f64 {
                    fill[k]
                } else {
                    bilinear(img, x, y, k)
                }
            })
        } else {
            img.clone()
        };
        if self.flip_h {
            out.invert_axis(Axis(1));
        }
        if self.flip_v {
            out.invert_axis(Axis(0));
        }
        out.as_standard_layout().into_owned()
    }

    pub fn map_segments(&self, segments: &[LineSegment], w: usize, h: usize) -> Vec<LineSegment> {
        let mapped = segments.iter().map(|s| {
            let (mut x1, mut y1) = self.map_point(s.x1, s.y1, w, h);
            let (mut x2, mut y2) = self.map_point(s.x2, s.y2, w, h);
            if self.flip_h {
                x1 = w as f64 - x1;
                x2 = w as f64 - x2;
            }
            if self.flip_v {
                y1 = h as f64 - y1;
                y2 = h as f64 - y2;
            }
            LineSegment {
                x1,
                y1,
                x2,
                y2,
                confidence: s.confidence,
            }
        });
        clip_to_image(mapped, w, h)
    }
}

fn channel_means(img: &Array3<f32>) -> Vec<f32> {
    img.axis_iter(Axis(2))
        .map(|p| (p.iter().map(|&v| v as f64).sum::<f64>() / p.len().max(1) as f64) as f32)
        .collect()
}

/// Rotation about the center, random crop rescaled to the input size, then
/// flips; segments follow the same maps and are clipped. Regions rotated in
/// from outside the image are filled with the mean color.
pub fn zoom_rotate_flip<R: Rng + ?Sized>(
    image: &Array3<f32>,
    segments: &[LineSegment],
    crop_fraction: f64,
    theta: f64,
    flip_h: bool,
    flip_v: bool,
    rng: &mut R,
) -> Result<(Array3<f32>, Vec<LineSegment>)> {
    let (h, w, _) = image.dim();
    let g = GeometricParams::with_random_crop(theta, crop_fraction, flip_h, flip_v, w, h, rng)?;
    Ok((g.apply_image(image, &channel_means(image)), g.map_segments(segments, w, h)))
}

pub fn flip_horizontal(image: &Array3<f32>, segments: &[LineSegment]) -> (Array3<f32>, Vec<LineSegment>) {
    let g = GeometricParams {
        flip_h: true,
        ..GeometricParams::identity()
    };
    let (h, w, c) = image.dim();
    (g.apply_image(image, &vec![0.0; c]), g.map_segments(segments, w, h))
}

pub fn flip_vertical(image: &Array3<f32>, segments: &[LineSegment]) -> (Array3<f32>, Vec<LineSegment>) {
    let g = GeometricParams {
        flip_v: true,
        ..GeometricParams::identity()
    };
    let (h, w, c) = image.dim();
    (g.apply_image(image, &vec![0.0; c]), g.map_segments(segments, w, h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn img() -> Array3<f32> {
        Array3::from_shape_fn((12, 12, 2), |(i, j, c)| (i * 12 + j + c) as f32 / 300.0)
    }

    #[test]
    fn identity() {
        let segs = vec![LineSegment::new(1.0, 2.0, 9.0, 11.0)];
        let (o, s) = zoom_rotate_flip(&img(), &segs, 1.0, 0.0, false, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(o, img());
        assert_eq!(s, segs);
    }

    #[test]
    fn quarter_turn() {
        let g = GeometricParams {
            theta: std::f64::consts::FRAC_PI_2,
            ..GeometricParams::identity()
        };
        let s = g.map_segments(&[LineSegment::new(2.0, 3.0, 8.0, 5.0)], 12, 12);
        let want = [3.0, 10.0, 5.0, 4.0];
        for (a, b) in s[0].coords().iter().zip(want) {
            assert!((a - b).abs() < 1e-9);
        }
        // pixel (row i, col j) → its center (j+.5, i+.5) lands at (i+.5, 11.5−j)
        let src = img();
        let out = g.apply_image(&src, &[0.0, 0.0]);
        for i in 0..12 {
            for j in 0..12 {
                assert!((out[[11 - j, i, 0]] - src[[i, j, 0]]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn double_flip_is_identity() {
        let segs = vec![LineSegment::new(1.5, 2.0, 9.0, 11.0)];
        let (a, s) = flip_horizontal(&img(), &segs);
        assert_ne!(a, img());
        let (b, s2) = flip_horizontal(&a, &s);
        assert_eq!(b, img());
        assert_eq!(s2, segs);
        let (c, t) = flip_vertical(&img(), &segs);
        assert_eq!(t[0].coords(), [1.5, 10.0, 9.0, 1.0]);
        assert_eq!(flip_vertical(&c, &t).0, img());
    }

    #[test]
    fn crop_scales_segments() {
        let g = GeometricParams {
            crop_fraction: 0.5,
            crop_origin: (2.0, 4.0),
            ..GeometricParams::identity()
        };
        let s = g.map_segments(&[LineSegment::new(3.0, 5.0, 6.0, 7.0)], 12, 12);
        assert_eq!(s[0].coords(), [2.0, 2.0, 8.0, 6.0]);
        assert!(zoom_rotate_flip(&img(), &[], 0.0, 0.0, false, false, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
