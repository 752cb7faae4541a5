use ndarray::{Array2, Array3};
use rand::Rng;

use super::photometric::validate_sigma;
use super::{bilinear, clip_to_image};
use crate::error::Result;
use crate::filter;
use crate::gridcodec::LineSegment;

/// Per-pixel displacement `Δ(q)` sampled at pixel centers.
#[derive(Debug, Clone, PartialEq)]
pub struct ElasticField {
    pub dx: Array2<f32>,
    pub dy: Array2<f32>,
}

impl ElasticField {
    /// Uniform `(−1, 1)` noise per pixel and component, Gaussian-smoothed
    /// with `sigma` (no smoothing when 0), rescaled so that the largest
    /// component magnitude equals `alpha` pixels.
    pub fn sample<R: Rng + ?Sized>(h: usize, w: usize, alpha: f64, sigma: f64, rng: &mut R) -> Result<Self> {
        validate_sigma("elastic alpha", alpha)?;
        validate_sigma("elastic sigma", sigma)?;
        let mut dx = Array2::from_shape_fn((h, w), |_| rng.random_range(-1.0f32..1.0));
        let mut dy = Array2::from_shape_fn((h, w), |_| rng.random_range(-1.0f32..1.0));
        if sigma > 0.0 {
            let k = filter::gaussian_kernel_1d(sigma, filter::kernel_size_for(sigma))?;
            filter::convolve_separable(dx.view_mut(), &k);
            filter::convolve_separable(dy.view_mut(), &k);
        }
        let peak = dx.iter().chain(dy.iter()).fold(0f32, |m, v| m.max(v.abs()));
        let scale = if peak > 0.0 { alpha as f32 / peak } else { 0.0 };
        dx.mapv_inplace(|v| v * scale);
        dy.mapv_inplace(|v| v * scale);
        Ok(Self { dx, dy })
    }

    pub fn constant(h: usize, w: usize, dx: f32, dy: f32) -> Self {
        Self {
            dx: Array2::from_elem((h, w), dx),
            dy: Array2::from_elem((h, w), dy),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.dx.iter().chain(self.dy.iter()).all(|&v| v == 0.0)
    }

    /// Bilinearly interpolated displacement at a continuous point.
    pub fn displacement_at(&self, x: f64, y: f64) -> (f64, f64) {
        let (h, w) = self.dx.dim();
        let u = (x - 0.5).clamp(0.0, (w - 1) as f64);
        let v = (y - 0.5).clamp(0.0, (h - 1) as f64);
        let (j0, i0) = (u.floor() as usize, v.floor() as usize);
        let (j1, i1) = ((j0 + 1).min(w - 1), (i0 + 1).min(h - 1));
        let (fx, fy) = (u - j0 as f64, v - i0 as f64);
        let lerp = |a: &Array2<f32>| {
            let top = a[[i0, j0]] as f64 * (1.0 - fx) + a[[i0, j1]] as f64 * fx;
            let bot = a[[i1, j0]] as f64 * (1.0 - fx) + a[[i1, j1]] as f64 * fx;
            top * (1.0 - fy) + bot * fy
        };
        (lerp(&self.dx), lerp(&self.dy))
    }

    /// Backward mapping `out(q) = in(q + Δ(q))` with bilinear sampling;
    /// works on any channel count.
    pub fn warp_image(&self, img: &Array3<f32>) -> Array3<f32> {
        let (h, w, c) = img.dim();
        Array3::from_shape_fn((h, w, c), |(i, j, k)| {
            let (x, y) = (j as f64 + 0.5, i as f64 + 0.5);
            bilinear(img, x + self.dx[[i, j]] as f64, y + self.dy[[i, j]] as f64, k)
        })
    }

    /// First-order inverse `q ≈ p − Δ(p)` of every endpoint, then clipping
    /// to the image.
    pub fn map_segments(&self, segments: &[LineSegment]) -> Vec<LineSegment> {
        let (h, w) = self.dx.dim();
        let mapped = segments.iter().map(|s| {
            let (d1x, d1y) = self.displacement_at(s.x1, s.y1);
            let (d2x, d2y) = self.displacement_at(s.x2, s.y2);
            LineSegment {
                x1: s.x1 - d1x,
                y1: s.y1 - d1y,
                x2: s.x2 - d2x,
                y2: s.y2 - d2y,
                confidence: s.confidence,
            }
        });
        clip_to_image(mapped, w, h)
    }
}

/// Random elastic deformation of an image and its segments.
pub fn elastic_transform<R: Rng + ?Sized>(
    image: &Array3<f32>,
    segments: &[LineSegment],
    alpha: f64,
    sigma: f64,
    rng: &mut R,
) -> Result<(Array3<f32>, Vec<LineSegment>)> {
    let (h, w, _) = image.dim();
    let field = ElasticField::sample(h, w, alpha, sigma, rng)?;
    if field.is_zero() {
        return Ok((image.clone(), segments.to_vec()));
    }
    Ok((field.warp_image(image), field.map_segments(segments)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_alpha_is_identity() {
        let img = Array3::from_shape_fn((16, 16, 3), |(i, j, c)| ((i + j + c) % 5) as f32 / 5.0);
        let segs = vec![LineSegment::new(1.0, 2.0, 10.0, 12.0)];
        let (o, s) = elastic_transform(&img, &segs, 0.0, 4.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(o, img);
        assert_eq!(s, segs);
    }

    #[test]
    fn constant_field_shifts() {
        let img = Array3::from_shape_fn((20, 20, 1), |(_, j, _)| j as f32 / 20.0);
        let f = ElasticField::constant(20, 20, 3.0, 0.0);
        let out = f.warp_image(&img);
        // content moves by −3: out(x) = in(x + 3)
        for i in 0..20 {
            for j in 0..17 {
                assert!((out[[i, j, 0]] - img[[i, j + 3, 0]]).abs() < 1e-6);
            }
        }
        let s = f.map_segments(&[LineSegment::new(5.0, 4.0, 15.0, 9.0)]);
        assert_eq!(s[0].coords(), [2.0, 4.0, 12.0, 9.0]);
    }

    #[test]
    fn field_magnitude_is_alpha() {
        let f = ElasticField::sample(32, 32, 4.0, 6.0, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let peak = f.dx.iter().chain(f.dy.iter()).fold(0f32, |m, v| m.max(v.abs()));
        assert!((peak - 4.0).abs() < 1e-5);
        assert!(ElasticField::sample(8, 8, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(5)).is_err());
    }
}
