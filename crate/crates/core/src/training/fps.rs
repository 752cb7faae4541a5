use std::time::Instant;

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::model::Model;

/// Warm-up iterations run before timing starts.
pub const WARMUP_ITERATIONS: usize = 2;

/// Forward-only throughput at batch size 1 on a `input_size²` image, in
/// frames per second. `n_iterations` (at least 10) are timed after the
/// warm-up.
pub fn measure_fps(model: &Model, input_size: usize, n_iterations: usize) -> Result<f64> {
    if n_iterations < 10 {
        return Err(Error::Config(format!("n_iterations must be at least 10, got {n_iterations}")));
    }
    let c = model.config().input_channels;
    let img = Array3::from_shape_fn((input_size, input_size, c), |(i, j, k)| {
        ((i * 7 + j * 3 + k) % 17) as f32 / 16.0
    });
    for _ in 0..WARMUP_ITERATIONS {
        std::hint::black_box(model.forward_sample(img.view(), false)?);
    }
    let start = Instant::now();
    for _ in 0..n_iterations {
        std::hint::black_box(model.forward_sample(img.view(), false)?);
    }
    Ok(n_iterations as f64 / start.elapsed().as_secs_f64())
}
