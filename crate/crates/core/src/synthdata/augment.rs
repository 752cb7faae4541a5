use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::elastic::ElasticField;
use super::geometric::GeometricParams;
use super::photometric::{add_gaussian_noise, apply_color, gaussian_blur, grayscale_rgb, validate_sigma, ColorJitter};
use super::scene::SceneRenderer;
use super::{check_probability, check_range, composite, sample_range, SampleRecord};
use crate::error::{Error, Result};
use crate::filter;

/// On-the-fly augmentation settings. Each family is applied independently
/// with probability `p_apply`; ranges are inclusive `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub p_apply: f64,
    pub noise_mu: f64,
    pub noise_sigma: [f64; 2],
    pub blur_sigma: [f64; 2],
    /// Odd blur kernel size; `None` covers ±3σ.
    pub blur_kernel_size: Option<usize>,
    pub color: ColorJitter,
    /// Probability of grayscale conversion when the color family fires.
    pub grayscale_p: f64,
    /// Peak elastic displacement, pixels.
    pub elastic_alpha: [f64; 2],
    pub elastic_sigma: [f64; 2],
    pub crop_fraction: [f64; 2],
    /// Rotation range, radians.
    pub rotation: [f64; 2],
    pub flip_h_p: f64,
    pub flip_v_p: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p_apply: 0.25,
            noise_mu: 0.0,
            noise_sigma: [0.02, 0.08],
            blur_sigma: [0.5, 2.0],
            blur_kernel_size: None,
            color: ColorJitter::default(),
            grayscale_p: 0.2,
            elastic_alpha: [1.0, 8.0],
            elastic_sigma: [6.0, 10.0],
            crop_fraction: [0.6, 1.0],
            rotation: [-std::f64::consts::FRAC_PI_6, std::f64::consts::FRAC_PI_6],
            flip_h_p: 0.5,
            flip_v_p: 0.5,
        }
    }
}

impl AugmentConfig {
    /// Configuration that never changes a record.
    pub fn disabled() -> Self {
        Self {
            p_apply: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_probability("p_apply", self.p_apply)?;
        check_probability("grayscale_p", self.grayscale_p)?;
        check_probability("flip_h_p", self.flip_h_p)?;
        check_probability("flip_v_p", self.flip_v_p)?;
        if !self.noise_mu.is_finite() {
            return Err(Error::Config("noise_mu must be finite".into()));
        }
        check_range("noise_sigma", self.noise_sigma, 0.0, f64::MAX)?;
        check_range("blur_sigma", self.blur_sigma, 0.0, f64::MAX)?;
        if let Some(k) = self.blur_kernel_size {
            if k % 2 == 0 {
                return Err(Error::Config(format!("blur_kernel_size must be odd, got {k}")));
            }
        }
        self.color.validate()?;
        check_range("elastic_alpha", self.elastic_alpha, 0.0, f64::MAX)?;
        check_range("elastic_sigma", self.elastic_sigma, 0.0, f64::MAX)?;
        check_range("crop_fraction", self.crop_fraction, f64::MIN_POSITIVE, 1.0)?;
        check_range("rotation", self.rotation, f64::MIN, f64::MAX)
    }
}

/// Which augmentation families fired for one record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AppliedOps {
    pub geometric: bool,
    pub elastic: bool,
    pub color: bool,
    pub blur: bool,
    pub noise: bool,
}

impl AppliedOps {
    /// Independent draws with probability `p` per family.
    pub fn sample<R: Rng + ?Sized>(p: f64, rng: &mut R) -> Self {
        let mut draw = || p > 0.0 && rng.random_bool(p);
        Self {
            geometric: draw(),
            elastic: draw(),
            color: draw(),
            blur: draw(),
            noise: draw(),
        }
    }

    pub fn any(&self) -> bool {
        self.geometric || self.elastic || self.color || self.blur || self.noise
    }
}

/// Augments one record; returns the result and the families applied.
///
/// Order: geometric (rotation, crop, flips), elastic, color, blur, noise.
/// Geometric and elastic changes are applied to the stroke layer and the
/// segments as well.
pub fn on_the_fly_augment<R: Rng + ?Sized>(
    record: &SampleRecord,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(SampleRecord, AppliedOps)> {
    cfg.validate()?;
    let ops = AppliedOps::sample(cfg.p_apply, rng);
    let mut out = record.clone();
    if !ops.any() {
        return Ok((out, ops));
    }
    let (h, w, _) = out.image.dim();
    if ops.geometric {
        let g = GeometricParams::with_random_crop(
            sample_range(rng, cfg.rotation),
            sample_range(rng, cfg.crop_fraction),
            rng.random_bool(cfg.flip_h_p),
            rng.random_bool(cfg.flip_v_p),
            w,
            h,
            rng,
        )?;
        let means: Vec<f32> = (0..3)
            .map(|c| out.image.index_axis(ndarray::Axis(2), c).mean().unwrap_or(0.0))
            .collect();
        out.image = g.apply_image(&out.image, &means);
        out.stroke = out.stroke.map(|s| g.apply_image(&s, &[0.0; 4]));
        out.segments = g.map_segments(&out.segments, w, h);
    }
    if ops.elastic {
        let alpha = sample_range(rng, cfg.elastic_alpha);
        let sigma = sample_range(rng, cfg.elastic_sigma);
        let field = ElasticField::sample(h, w, alpha, sigma, rng)?;
        if !field.is_zero() {
            out.image = field.warp_image(&out.image);
            out.stroke = out.stroke.map(|s| field.warp_image(&s));
            out.segments = field.map_segments(&out.segments);
        }
    }
    if ops.color {
        out.image = apply_color(&out.image, cfg.color.sample(rng));
        if rng.random_bool(cfg.grayscale_p) {
            out.image = grayscale_rgb(&out.image);
        }
    }
    if ops.blur {
        let sigma = sample_range(rng, cfg.blur_sigma);
        if sigma > 0.0 {
            let k = cfg.blur_kernel_size.unwrap_or_else(|| filter::kernel_size_for(sigma));
            out.image = gaussian_blur(&out.image, sigma, k)?;
        }
    }
    if ops.noise {
        let sigma = sample_range(rng, cfg.noise_sigma);
        validate_sigma("noise sigma", sigma)?;
        out.image = add_gaussian_noise(&out.image, cfg.noise_mu, sigma, rng);
    }
    Ok((out, ops))
}

/// Settings of the offline expansion: crops, their mirror images, and
/// re-composition over fresh backgrounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OfflineConfig {
    pub n_crops: usize,
    pub n_backgrounds: usize,
    /// Also emit the horizontally flipped version of every crop.
    pub flip: bool,
    pub crop_fraction: [f64; 2],
}

impl Default for OfflineConfig {
    fn default() -> Self {
        Self {
            n_crops: 5,
            n_backgrounds: 5,
            flip: true,
            crop_fraction: [0.6, 0.9],
        }
    }
}

/// Expands every record into `n_crops × (1 + flip) × n_backgrounds` records.
///
/// Records need a stroke layer; each output composites the transformed
/// stroke over a new background drawn from `renderer` and carries its own
/// seed, derived from `seed`.
pub fn make_offline_set(
    records: &[SampleRecord],
    cfg: &OfflineConfig,
    renderer: &SceneRenderer,
    seed: u64,
) -> Result<Vec<SampleRecord>> {
    check_range("crop_fraction", cfg.crop_fraction, f64::MIN_POSITIVE, 1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for rec in records {
        let stroke = rec
            .stroke
            .as_ref()
            .ok_or_else(|| Error::Config(format!("record {} has no stroke layer to re-composite", rec.seed)))?;
        let (h, w, _) = rec.image.dim();
        if h != w {
            return Err(Error::Shape(format!("record {} is not square ({h}×{w})", rec.seed)));
        }
        for _ in 0..cfg.n_crops {
            let frac = sample_range(&mut rng, cfg.crop_fraction);
            let base = GeometricParams::with_random_crop(0.0, frac, false, false, w, h, &mut rng)?;
            let variants: &[bool] = if cfg.flip { &[false, true] } else { &[false] };
            for &flip_h in variants {
                let g = GeometricParams { flip_h, ..base };
                let s = g.apply_image(stroke, &[0.0; 4]);
                let segs = g.map_segments(&rec.segments, w, h);
                for _ in 0..cfg.n_backgrounds {
                    let out_seed: u64 = rng.random();
                    let mut bg_rng = ChaCha8Rng::seed_from_u64(out_seed);
                    let bg = renderer.background(w, &mut bg_rng);
                    out.push(SampleRecord {
                        image: composite(&bg, &s),
                        segments: segs.clone(),
                        seed: out_seed,
                        provenance: format!("{}+offline", rec.provenance),
                        stroke: Some(s.clone()),
                    });
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::scene::SceneParams;

    fn record() -> SampleRecord {
        SceneRenderer::new(SceneParams::default()).unwrap().render(64, 3).unwrap()
    }

    #[test]
    fn disabled_is_identity() {
        let r = record();
        let (o, ops) = on_the_fly_augment(&r, &AugmentConfig::disabled(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(o, r);
        assert!(!ops.any());
    }

    #[test]
    fn always_applies_everything() {
        let r = record();
        let cfg = AugmentConfig {
            p_apply: 1.0,
            ..Default::default()
        };
        let (o, ops) = on_the_fly_augment(&r, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(ops.geometric && ops.elastic && ops.color && ops.blur && ops.noise);
        assert!(o.image.iter().all(|v| (0.0..=1.0).contains(v)));
        for s in &o.segments {
            assert!(s.coords().iter().all(|v| (0.0..=64.0).contains(v)));
        }
    }

    #[test]
    fn application_frequency() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 10_000;
        let mut counts = [0usize; 5];
        for _ in 0..n {
            let o = AppliedOps::sample(0.25, &mut rng);
            for (c, f) in counts.iter_mut().zip([o.geometric, o.elastic, o.color, o.blur, o.noise]) {
                *c += f as usize;
            }
        }
        for c in counts {
            let f = c as f64 / n as f64;
            assert!((0.22..=0.28).contains(&f), "{f}");
        }
    }

    #[test]
    fn offline_counts_and_seeds() {
        let renderer = SceneRenderer::new(SceneParams::default()).unwrap();
        let r = renderer.render(32, 4).unwrap();
        let out = make_offline_set(std::slice::from_ref(&r), &OfflineConfig::default(), &renderer, 7).unwrap();
        assert_eq!(out.len(), 50);
        let mut seeds: Vec<u64> = out.iter().map(|o| o.seed).collect();
        seeds.sort();
        seeds.dedup();
        assert_eq!(seeds.len(), 50);
        let again = make_offline_set(std::slice::from_ref(&r), &OfflineConfig::default(), &renderer, 7).unwrap();
        assert_eq!(out, again);

        let plain = OfflineConfig {
            n_crops: 1,
            n_backgrounds: 1,
            flip: false,
            crop_fraction: [1.0, 1.0],
        };
        let one = make_offline_set(std::slice::from_ref(&r), &plain, &renderer, 7).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].segments, r.segments);
        assert_eq!(one[0].stroke, r.stroke);
    }
}
