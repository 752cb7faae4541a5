//! Pixel-level precision (APR), recall (ARR) and F1, computed per image and
//! macro-averaged over a dataset.
//!
//! Macro-averaging means the dataset F1 is the mean of per-image F1 values,
//! which in general differs from the harmonic mean of dataset APR and ARR.

use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::postprocess::SegmentationMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

/// Per-image scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalResult {
    pub apr: f64,
    pub arr: f64,
    pub f1: f64,
    pub n_images: usize,
    pub per_image: Vec<ImageScore>,
}

/// Pixelwise confusion counts of two binary maps (nonzero = set).
pub fn confusion(pred: &SegmentationMap, gt: &SegmentationMap) -> Result<Confusion> {
    confusion_arrays(&pred.values, &gt.values)
}

pub fn confusion_arrays(pred: &Array2<f32>, gt: &Array2<f32>) -> Result<Confusion> {
    if pred.dim() != gt.dim() {
        return Err(Error::Shape(format!(
            "prediction map {:?} vs ground truth {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    let mut c = Confusion::default();
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        match (p != 0.0, g != 0.0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(c)
}

/// Precision, recall and F1 from counts.
///
/// Precision is 1 when nothing is predicted and nothing is present, 0 when
/// nothing is predicted but something is present. Recall is 1 when the
/// ground truth is empty. F1 is 0 when precision + recall is 0.
pub fn score(c: Confusion) -> ImageScore {
    let precision = if c.tp + c.fp == 0 {
        if c.tp + c.fn_ == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        c.tp as f64 / (c.tp + c.fp) as f64
    };
    let recall = if c.tp + c.fn_ == 0 {
        1.0
    } else {
        c.tp as f64 / (c.tp + c.fn_) as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    ImageScore {
        precision,
        recall,
        f1,
        tp: c.tp,
        fp: c.fp,
        fn_: c.fn_,
    }
}

/// Grows every set pixel of `gt` by a square of radius `radius`.
pub fn dilate_binary(gt: &Array2<f32>, radius: usize) -> Array2<f32> {
    if radius == 0 {
        return gt.clone();
    }
    let (h, w) = gt.dim();
    let r = radius as isize;
    let mut out = Array2::zeros((h, w));
    for ((y, x), &v) in gt.indexed_iter() {
        if v == 0.0 {
            continue;
        }
        for dy in -r..=r {
            for dx in -r..=r {
                let (yy, xx) = (y as isize + dy, x as isize + dx);
                if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                    out[[yy as usize, xx as usize]] = 1.0;
                }
            }
        }
    }
    out
}

/// Aggregates per-image scores into dataset means.
pub fn aggregate(per_image: Vec<ImageScore>) -> Result<EvalResult> {
    if per_image.is_empty() {
        return Err(Error::Empty("cannot evaluate an empty dataset".into()));
    }
    let n = per_image.len() as f64;
    let mean = |f: fn(&ImageScore) -> f64| per_image.iter().map(f).sum::<f64>() / n;
    Ok(EvalResult {
        apr: mean(|s| s.precision),
        arr: mean(|s| s.recall),
        f1: mean(|s| s.f1),
        n_images: per_image.len(),
        per_image,
    })
}

/// Macro-averaged evaluation of aligned prediction / ground-truth binary maps.
///
/// `gt_dilation` optionally widens the ground truth by a square radius before
/// counting (0 disables it).
pub fn evaluate_dataset(
    pred_maps: &[SegmentationMap],
    gt_maps: &[SegmentationMap],
    gt_dilation: usize,
) -> Result<EvalResult> {
    if pred_maps.len() != gt_maps.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} ground-truth maps",
            pred_maps.len(),
            gt_maps.len()
        )));
    }
    let scores = pred_maps
        .iter()
        .zip(gt_maps)
        .map(|(p, g)| {
            let gt = dilate_binary(&g.values, gt_dilation);
            confusion_arrays(&p.values, &gt).map(score)
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate(scores)
}

impl EvalResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("evaluation report is always serializable")
    }

    /// Harmonic mean of the dataset APR and ARR (differs from `f1` in general).
    pub fn harmonic_f1(&self) -> f64 {
        if self.apr + self.arr == 0.0 {
            0.0
        } else {
            2.0 * self.apr * self.arr / (self.apr + self.arr)
        }
    }
}

/// Plain-text table with one row per method: `Method | APR | ARR | F1 Score`.
pub fn format_table(rows: &[(String, EvalResult)]) -> String {
    let name_w = rows
        .iter()
        .map(|(n, _)| n.len())
        .max()
        .unwrap_or(6)
        .max("Method".len());
    let mut s = String::new();
    let rule = format!("+{}+--------+--------+----------+\n", "-".repeat(name_w + 2));
    s.push_str(&rule);
    let _ = writeln!(s, "| {:<name_w$} | APR    | ARR    | F1 Score |", "Method");
    s.push_str(&rule);
    for (name, r) in rows {
        let _ = writeln!(
            s,
            "| {:<name_w$} | {:.4} | {:.4} | {:.4}   |",
            name, r.apr, r.arr, r.f1
        );
    }
    s.push_str(&rule);
    s
}
