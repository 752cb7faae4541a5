use std::path::Path;

use ndarray::{Array3, Axis};
use serde::{Deserialize, Serialize};

use super::config::EvalConfig;
use super::trainer::check_images;
use crate::error::{Error, Result};
use crate::gridcodec::{decode_predictions, GridSet, GridSpec, LineSegment, ParityMask};
use crate::metrics::{evaluate_dataset, EvalResult};
use crate::model::{class_probabilities, load_checkpoint, Mode, Model};
use crate::postprocess::{rasterize_segments, smooth_map, SegmentationMap};
use crate::synthdata::{resize_image, Dataset, SampleRecord};

pub const EVAL_REPORT_VERSION: u32 = 1;

/// Evaluation output as written by the command-line tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub version: u32,
    /// Checkpoint path, or `null` when ground truth was scored as prediction.
    pub checkpoint: Option<String>,
    pub manifest: String,
    pub eval: EvalConfig,
    pub result: EvalResult,
    /// Harmonic mean of `result.apr` and `result.arr`.
    pub harmonic_f1: f64,
}

impl EvalReport {
    pub fn new(checkpoint: Option<String>, manifest: String, eval: EvalConfig, result: EvalResult) -> Self {
        Self {
            version: EVAL_REPORT_VERSION,
            checkpoint,
            manifest,
            eval,
            harmonic_f1: result.harmonic_f1(),
            result,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Detected segments in the coordinates of `image`, which is resized to the
/// model input when needed. Only cells of `grids` are decoded.
pub fn detect_segments(model: &Model, image: &Array3<f32>, threshold: f64, grids: GridSet) -> Result<Vec<LineSegment>> {
    let mc = model.config();
    let s = mc.input_size;
    let (h, w, _) = image.dim();
    let input = if (h, w) == (s, s) {
        image.clone()
    } else {
        resize_image(image, s, s)
    };
    let out = model.forward(input.insert_axis(Axis(0)).view(), Mode::Eval)?;
    let mut probs = class_probabilities(out.class_logits.index_axis(Axis(0), 0))?;
    if grids != GridSet::ALL {
        probs = probs.mask_parity_classes(grids)?;
    }
    let spec = GridSpec::new(s, mc.cell_size())?;
    let mut segs = decode_predictions(probs.view(), out.reg_out.index_axis(Axis(0), 0), &spec, threshold)?;
    if (h, w) != (s, s) {
        let (fx, fy) = (w as f64 / s as f64, h as f64 / s as f64);
        for seg in &mut segs {
            seg.x1 *= fx;
            seg.x2 *= fx;
            seg.y1 *= fy;
            seg.y2 *= fy;
        }
    }
    Ok(segs)
}

/// Rasterize at `W_l`, smooth, binarize.
pub fn prediction_map(segments: &[LineSegment], width: usize, height: usize, cfg: &EvalConfig) -> Result<SegmentationMap> {
    let raw = rasterize_segments(segments, cfg.line_width, width, height);
    let smooth = smooth_map(&raw, cfg.sigma_s, cfg.kernel_size)?;
    Ok(cfg.binarization.apply(&smooth))
}

/// Ground-truth raster at `W_l` (confidence ignored).
pub fn ground_truth_map(segments: &[LineSegment], width: usize, height: usize, line_width: usize) -> SegmentationMap {
    let plain: Vec<LineSegment> = segments
        .iter()
        .map(|s| LineSegment {
            confidence: None,
            ..*s
        })
        .collect();
    let mut m = rasterize_segments(&plain, line_width, width, height);
    m.kind = crate::postprocess::MapKind::Binary;
    m
}

/// Scores per-image predicted segment lists against ground-truth records
/// (images are used only for their size).
pub fn evaluate_predictions(
    predictions: &[Vec<LineSegment>],
    ground_truth: &[SampleRecord],
    cfg: &EvalConfig,
) -> Result<EvalResult> {
    cfg.validate()?;
    if predictions.len() != ground_truth.len() {
        return Err(Error::Shape(format!(
            "{} prediction lists for {} images",
            predictions.len(),
            ground_truth.len()
        )));
    }
    let mut pred_maps = Vec::with_capacity(predictions.len());
    let mut gt_maps = Vec::with_capacity(predictions.len());
    for (p, g) in predictions.iter().zip(ground_truth) {
        let (w, h) = (g.width(), g.height());
        pred_maps.push(prediction_map(p, w, h, cfg)?);
        gt_maps.push(ground_truth_map(&g.segments, w, h, cfg.line_width));
    }
    evaluate_dataset(&pred_maps, &gt_maps, cfg.gt_dilation)
}

/// Runs the detector on every record (at its own resolution) and scores it.
pub fn evaluate_records(model: &Model, records: &[SampleRecord], cfg: &EvalConfig) -> Result<EvalResult> {
    cfg.validate()?;
    let preds = records
        .iter()
        .map(|r| detect_segments(model, &r.image, cfg.decode_threshold, cfg.grids))
        .collect::<Result<Vec<_>>>()?;
    evaluate_predictions(&preds, records, cfg)
}

/// Loads every record of a manifest at its native resolution, failing with
/// a listing of all missing images.
pub fn load_eval_records(manifest: &Path) -> Result<Vec<SampleRecord>> {
    let ds = Dataset::open(manifest)?;
    if ds.is_empty() {
        return Err(Error::Empty(format!("{} has no records", manifest.display())));
    }
    check_images(&ds)?;
    (0..ds.len()).map(|i| ds.load(i, None)).collect()
}

/// Evaluates `model` on the images of a manifest.
pub fn evaluate_model(model: &Model, manifest: &Path, cfg: &EvalConfig) -> Result<EvalResult> {
    cfg.validate()?;
    evaluate_records(model, &load_eval_records(manifest)?, cfg)
}

/// Evaluates a checkpoint file on the images of a manifest.
pub fn evaluate_checkpoint(checkpoint: &Path, manifest: &Path, cfg: &EvalConfig) -> Result<EvalResult> {
    let ck = load_checkpoint(checkpoint)?;
    evaluate_model(&ck.model, manifest, cfg)
}

/// Feeds each record's ground-truth segments (confidence 1) through the
/// evaluation pipeline as if they were predictions.
pub fn evaluate_ground_truth(manifest: &Path, cfg: &EvalConfig) -> Result<EvalResult> {
    let records = load_eval_records(manifest)?;
    let preds: Vec<Vec<LineSegment>> = records
        .iter()
        .map(|r| r.segments.iter().map(|s| s.with_confidence(1.0)).collect())
        .collect();
    evaluate_predictions(&preds, &records, cfg)
}
