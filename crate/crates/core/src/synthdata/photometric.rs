use ndarray::{Array3, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{check_range, sample_range};
use crate::error::{Error, Result};
use crate::filter;

const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

/// `clamp(s + n, 0, 1)` with `n ~ N(mu, sigma²)` i.i.d. per pixel and channel.
pub fn add_gaussian_noise<R: Rng + ?Sized>(image: &Array3<f32>, mu: f64, sigma: f64, rng: &mut R) -> Array3<f32> {
    if sigma == 0.0 {
        return image.mapv(|v| (v as f64 + mu).clamp(0.0, 1.0) as f32);
    }
    let normal = Normal::new(mu, sigma.abs()).expect("finite sigma");
    image.mapv(|v| (v as f64 + normal.sample(rng)).clamp(0.0, 1.0) as f32)
}

/// Separable Gaussian blur of each channel with reflected borders.
pub fn gaussian_blur(image: &Array3<f32>, sigma: f64, kernel_size: usize) -> Result<Array3<f32>> {
    let k = filter::gaussian_kernel_1d(sigma, kernel_size)?;
    let mut out = image.clone();
    for mut plane in out.axis_iter_mut(Axis(2)) {
        filter::convolve_separable(plane.view_mut(), &k);
    }
    Ok(out)
}

/// Luma replicated into all three channels.
pub fn grayscale_rgb(image: &Array3<f32>) -> Array3<f32> {
    let mut out = image.clone();
    for mut px in out.lanes_mut(Axis(2)) {
        let y = LUMA[0] * px[0] + LUMA[1] * px[1] + LUMA[2] * px[2];
        px.fill(y.clamp(0.0, 1.0));
    }
    out
}

/// Jitter ranges; identity is `[1, 1]` for the factors and `[0, 0]` for hue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ColorJitter {
    pub brightness: [f64; 2],
    pub contrast: [f64; 2],
    pub saturation: [f64; 2],
    /// Hue rotation as a fraction of a full turn.
    pub hue: [f64; 2],
}

impl Default for ColorJitter {
    fn default() -> Self {
        Self {
            brightness: [0.8, 1.2],
            contrast: [0.8, 1.2],
            saturation: [0.7, 1.3],
            hue: [-0.05, 0.05],
        }
    }
}

impl ColorJitter {
    pub fn identity() -> Self {
        Self {
            brightness: [1.0, 1.0],
            contrast: [1.0, 1.0],
            saturation: [1.0, 1.0],
            hue: [0.0, 0.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_range("brightness", self.brightness, 0.0, 10.0)?;
        check_range("contrast", self.contrast, 0.0, 10.0)?;
        check_range("saturation", self.saturation, 0.0, 10.0)?;
        check_range("hue", self.hue, -0.5, 0.5)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ColorFactors {
        ColorFactors {
            brightness: sample_range(rng, self.brightness),
            contrast: sample_range(rng, self.contrast),
            saturation: sample_range(rng, self.saturation),
            hue: sample_range(rng, self.hue),
        }
    }
}

/// One draw of the four color manipulations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorFactors {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

/// Applies brightness, contrast, saturation and hue in that order, clamping
/// to `[0, 1]` after each step.
///
/// Brightness scales every value; contrast scales the distance to the mean
/// image luma; saturation scales each pixel's distance to its own luma; hue
/// rotates the HSV hue.
pub fn apply_color(image: &Array3<f32>, f: ColorFactors) -> Array3<f32> {
    let clamp = |v: f32| v.clamp(0.0, 1.0);
    let mut out = image.clone();
    if f.brightness != 1.0 {
        let b = f.brightness as f32;
        out.mapv_inplace(|v| clamp(v * b));
    }
    if f.contrast != 1.0 {
        let c = f.contrast as f32;
        let n = (out.len() / 3).max(1) as f64;
        let mean = (out
            .lanes(Axis(2))
            .into_iter()
            .map(|px| (LUMA[0] * px[0] + LUMA[1] * px[1] + LUMA[2] * px[2]) as f64)
            .sum::<f64>()
            / n) as f32;
        out.mapv_inplace(|v| clamp((v - mean) * c + mean));
    }
    if f.saturation != 1.0 {
        let s = f.saturation as f32;
        for mut px in out.lanes_mut(Axis(2)) {
            let y = LUMA[0] * px[0] + LUMA[1] * px[1] + LUMA[2] * px[2];
            px.mapv_inplace(|v| clamp(y + (v - y) * s));
        }
    }
    if f.hue != 0.0 {
        for mut px in out.lanes_mut(Axis(2)) {
            let (h, s, v) = rgb_to_hsv(px[0], px[1], px[2]);
            let h = (h + f.hue as f32).rem_euclid(1.0);
            let (r, g, b) = hsv_to_rgb(h, s, v);
            px[0] = clamp(r);
            px[1] = clamp(g);
            px[2] = clamp(b);
        }
    }
    out
}

/// Samples factors from `ranges` and applies them.
pub fn color_jitter<R: Rng + ?Sized>(image: &Array3<f32>, ranges: &ColorJitter, rng: &mut R) -> Result<Array3<f32>> {
    ranges.validate()?;
    Ok(apply_color(image, ranges.sample(rng)))
}

fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = h * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match (i as i64).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

pub(crate) fn validate_sigma(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
    }
    Ok(())
}
