//! Discrete Gaussian kernels and separable filtering with reflected borders.

use ndarray::{Array2, ArrayViewMut2};

use crate::error::{Error, Result};

/// Sum-normalized 1-D Gaussian kernel of odd length `size`.
///
/// The outer product of this kernel with itself equals the sum-normalized
/// sampling of the 2-D Gaussian `G(x, y) ∝ exp(−(x² + y²) / 2σ²)` on the
/// integer offsets of a `size × size` window.
pub fn gaussian_kernel_1d(sigma: f64, size: usize) -> Result<Vec<f64>> {
    if size % 2 == 0 {
        return Err(Error::Config(format!(
            "Gaussian kernel size must be odd, got {size}"
        )));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Config(format!(
            "Gaussian sigma must be positive and finite, got {sigma}"
        )));
    }
    let half = (size / 2) as i64;
    let mut k: Vec<f64> = (-half..=half)
        .map(|x| (-((x * x) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    Ok(k)
}

/// Smallest odd kernel size covering ±3σ.
pub fn kernel_size_for(sigma: f64) -> usize {
    let half = (3.0 * sigma).ceil().max(1.0) as usize;
    2 * half + 1
}

/// Mirror index without repeating the edge sample (`dcb|abcd|cba`).
#[inline]
pub(crate) fn reflect101(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

/// In-place separable convolution of a single plane with `kernel` along
/// both axes, reflecting at the borders.
pub fn convolve_separable(mut plane: ArrayViewMut2<f32>, kernel: &[f64]) {
    let (h, w) = plane.dim();
    if h == 0 || w == 0 {
        return;
    }
    let half = (kernel.len() / 2) as isize;
    let mut row_buf = vec![0f64; w];
    let mut tmp = Array2::<f32>::zeros((h, w));
    for y in 0..h {
        for (x, v) in row_buf.iter_mut().enumerate() {
            *v = plane[[y, x]] as f64;
        }
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let sx = reflect101(x as isize + k as isize - half, w);
                acc += kv * row_buf[sx];
            }
            tmp[[y, x]] = acc as f32;
        }
    }
    let mut col_buf = vec![0f64; h];
    for x in 0..w {
        for (y, v) in col_buf.iter_mut().enumerate() {
            *v = tmp[[y, x]] as f64;
        }
        for y in 0..h {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let sy = reflect101(y as isize + k as isize - half, h);
                acc += kv * col_buf[sy];
            }
            plane[[y, x]] = acc as f32;
        }
    }
}

/// Gaussian blur of one plane; `kernel_size` must be odd and `sigma > 0`.
pub fn gaussian_blur_plane(plane: ArrayViewMut2<f32>, sigma: f64, kernel_size: usize) -> Result<()> {
    let k = gaussian_kernel_1d(sigma, kernel_size)?;
    convolve_separable(plane, &k);
    Ok(())
}
