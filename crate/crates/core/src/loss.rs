//! Weighted multi-task loss: focal cell classification plus Wing endpoint
//! regression over the order-free endpoint error.
//!
//! ```text
//! L = L_cls(p_t, y) + λ·[y = 1]·L_reg(e, t)
//! L_cls = −α_t (1 − p_t)^γ ln p_t
//! d(e, t) = min(Σ|t − e|, Σ|t − swap(e)|)
//! L_reg = w·ln(1 + d/ε)        if d < w
//!       = d − (w − w·ln(1 + w/ε)) otherwise
//! ```
//!
//! Classification is averaged over every (eligible) lattice cell, regression
//! over positive cells only.

use ndarray::{ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to `[δ, 1 − δ]` before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassificationLoss {
    Focal,
    CrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionLoss {
    Wing,
    L1,
    L2,
    SmoothL1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Regression weight λ.
    pub lambda: f64,
    /// Focusing parameter γ ≥ 0.
    pub gamma: f64,
    /// Positive-class weight α ∈ [0, 1].
    pub alpha: f64,
    /// Wing nonlinear range w > 0.
    pub wing_w: f64,
    /// Wing curvature ε > 0.
    pub wing_epsilon: f64,
    pub cls_variant: ClassificationLoss,
    pub reg_variant: RegressionLoss,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            gamma: 2.0,
            alpha: 0.25,
            wing_w: 10.0,
            wing_epsilon: 2.0,
            cls_variant: ClassificationLoss::Focal,
            reg_variant: RegressionLoss::Wing,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be finite and >= 0, got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(self.wing_w > 0.0 && self.wing_w.is_finite()) {
            return bad(format!("wing_w must be > 0, got {}", self.wing_w));
        }
        if !(self.wing_epsilon > 0.0 && self.wing_epsilon.is_finite()) {
            return bad(format!("wing_epsilon must be > 0, got {}", self.wing_epsilon));
        }
        Ok(())
    }

    /// The constant joining the two Wing branches, `w − w·ln(1 + w/ε)`.
    pub fn wing_c(&self) -> f64 {
        wing_constant(self.wing_w, self.wing_epsilon)
    }
}

/// Loss decomposition for one evaluation; `total = cls_term + λ·reg_term`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub cls_term: f64,
    pub reg_term: f64,
    pub positive_cell_count: usize,
}

pub fn wing_constant(w: f64, epsilon: f64) -> f64 {
    w - w * (1.0 + w / epsilon).ln()
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Focal loss of one cell with probability `p` of holding a segment and label `y = ±1`.
pub fn focal_loss(p: f64, y: i8, gamma: f64, alpha: f64) -> f64 {
    let (pt, at) = if y == 1 {
        (clamp_prob(p), alpha)
    } else {
        (clamp_prob(1.0 - p), 1.0 - alpha)
    };
    -at * (1.0 - pt).powf(gamma) * pt.ln()
}

/// Derivative of [`focal_loss`] with respect to `p`.
fn focal_grad_p(p: f64, y: i8, gamma: f64, alpha: f64) -> f64 {
    let (raw_pt, at, sign) = if y == 1 {
        (p, alpha, 1.0)
    } else {
        (1.0 - p, 1.0 - alpha, -1.0)
    };
    if raw_pt < PROB_CLAMP || raw_pt > 1.0 - PROB_CLAMP {
        return 0.0;
    }
    let pt = raw_pt;
    let q = 1.0 - pt;
    let mut g = -q.powf(gamma) / pt;
    if gamma != 0.0 {
        g += gamma * q.powf(gamma - 1.0) * pt.ln();
    }
    sign * at * g
}

/// Standard binary cross-entropy `−ln p_t`.
pub fn cross_entropy(p: f64, y: i8) -> f64 {
    2.0 * focal_loss(p, y, 0.0, 0.5)
}

/// Classification loss of one cell under the configured variant.
pub fn classification_loss(p: f64, y: i8, cfg: &LossConfig) -> f64 {
    match cfg.cls_variant {
        ClassificationLoss::Focal => focal_loss(p, y, cfg.gamma, cfg.alpha),
        ClassificationLoss::CrossEntropy => cross_entropy(p, y),
    }
}

fn classification_grad_p(p: f64, y: i8, cfg: &LossConfig) -> f64 {
    match cfg.cls_variant {
        ClassificationLoss::Focal => focal_grad_p(p, y, cfg.gamma, cfg.alpha),
        ClassificationLoss::CrossEntropy => 2.0 * focal_grad_p(p, y, 0.0, 0.5),
    }
}

/// `(e_x2, e_y2, e_x1, e_y1)`.
pub fn swap_endpoints(e: [f64; 4]) -> [f64; 4] {
    [e[2], e[3], e[0], e[1]]
}

/// Order-free endpoint error `min(Σ|t − e|, Σ|t − swap(e)|)`.
pub fn endpoint_error(e: [f64; 4], t: [f64; 4]) -> f64 {
    let direct: f64 = (0..4).map(|k| (t[k] - e[k]).abs()).sum();
    let s = swap_endpoints(e);
    let crossed: f64 = (0..4).map(|k| (t[k] - s[k]).abs()).sum();
    direct.min(crossed)
}

/// Wing loss of a non-negative error `d`.
pub fn wing_loss(d: f64, w: f64, epsilon: f64) -> f64 {
    if d < w {
        w * (1.0 + d / epsilon).ln()
    } else {
        d - wing_constant(w, epsilon)
    }
}

fn wing_grad(d: f64, w: f64, epsilon: f64) -> f64 {
    if d < w {
        w / (epsilon + d)
    } else {
        1.0
    }
}

fn smooth_l1(d: f64) -> f64 {
    if d < 1.0 {
        0.5 * d * d
    } else {
        d - 0.5
    }
}

/// Regression loss of one positive cell: the variant's penalty under
/// whichever endpoint order of `e` gives the smaller value. For the
/// penalties of `d` (wing, L1, smooth L1) this is the penalty of
/// [`endpoint_error`].
pub fn regression_loss(e: [f64; 4], t: [f64; 4], cfg: &LossConfig) -> f64 {
    regression_loss_and_grad(e, t, cfg).0
}

fn regression_loss_and_grad(e: [f64; 4], t: [f64; 4], cfg: &LossConfig) -> (f64, [f64; 4]) {
    // the penalty is evaluated under both endpoint orders and the smaller
    // one kept; ties keep the given order
    let (l0, g0) = penalty(e, t, cfg);
    let (l1, g1) = penalty(swap_endpoints(e), t, cfg);
    if l1 < l0 {
        (l1, swap_endpoints(g1))
    } else {
        (l0, g0)
    }
}

fn penalty(a: [f64; 4], t: [f64; 4], cfg: &LossConfig) -> (f64, [f64; 4]) {
    let r: [f64; 4] = std::array::from_fn(|k| a[k] - t[k]);
    let d: f64 = r.iter().map(|v| v.abs()).sum();
    let sgn = |v: f64| {
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    match cfg.reg_variant {
        RegressionLoss::Wing => {
            let g = wing_grad(d, cfg.wing_w, cfg.wing_epsilon);
            (
                wing_loss(d, cfg.wing_w, cfg.wing_epsilon),
                std::array::from_fn(|k| g * sgn(r[k])),
            )
        }
        RegressionLoss::L1 => (d, std::array::from_fn(|k| sgn(r[k]))),
        RegressionLoss::SmoothL1 => {
            let g = if d < 1.0 { d } else { 1.0 };
            (smooth_l1(d), std::array::from_fn(|k| g * sgn(r[k])))
        }
        RegressionLoss::L2 => (
            r.iter().map(|v| v * v).sum(),
            std::array::from_fn(|k| 2.0 * r[k]),
        ),
    }
}

/// Multi-task loss over one lattice given per-cell probabilities.
///
/// `class_probs` is `[R, C]`, `labels` is `[R, C]` with values `±1`,
/// `reg_pred` and `reg_target` are `[R, C, 4]`.
pub fn multitask_loss(
    class_probs: ArrayView2<f32>,
    labels: ArrayView2<i8>,
    reg_pred: ArrayView3<f32>,
    reg_target: ArrayView3<f32>,
    cfg: &LossConfig,
) -> Result<LossReport> {
    let (r, c) = class_probs.dim();
    if labels.dim() != (r, c) || reg_pred.dim() != (r, c, 4) || reg_target.dim() != (r, c, 4) {
        return Err(Error::Shape(format!(
            "loss inputs disagree: probs {:?}, labels {:?}, reg_pred {:?}, reg_target {:?}",
            class_probs.dim(),
            labels.dim(),
            reg_pred.dim(),
            reg_target.dim()
        )));
    }
    let mut cls_sum = 0.0;
    let mut reg_sum = 0.0;
    let mut positives = 0usize;
    for ((i, j), &y) in labels.indexed_iter() {
        cls_sum += classification_loss(class_probs[[i, j]] as f64, y, cfg);
        if y == 1 {
            positives += 1;
            let e = std::array::from_fn(|k| reg_pred[[i, j, k]] as f64);
            let t = std::array::from_fn(|k| reg_target[[i, j, k]] as f64);
            reg_sum += regression_loss(e, t, cfg);
        }
    }
    let n = (r * c).max(1) as f64;
    Ok(report(cls_sum / n, reg_sum, positives, cfg))
}

fn report(cls_term: f64, reg_sum: f64, positives: usize, cfg: &LossConfig) -> LossReport {
    let reg_term = if positives > 0 {
        reg_sum / positives as f64
    } else {
        0.0
    };
    LossReport {
        total: cls_term + cfg.lambda * reg_term,
        cls_term,
        reg_term,
        positive_cell_count: positives,
    }
}

/// Flattened per-cell network outputs and targets for a batch of lattices.
///
/// `logits` holds two values per cell (`[no segment, segment]`), `reg_pred`
/// and `reg_target` four. `eligible`, when given, removes cells from both
/// terms (used to train on a subset of the four grids).
#[derive(Debug, Clone, Copy)]
pub struct CellBatch<'a> {
    pub logits: &'a [f64],
    pub labels: &'a [i8],
    pub reg_pred: &'a [f64],
    pub reg_target: &'a [f64],
    pub eligible: Option<&'a [bool]>,
}

/// Gradients of the total loss w.r.t. the logits and regression outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrads {
    pub logits: Vec<f64>,
    pub reg: Vec<f64>,
}

/// Probability of the "segment" class from a logit pair.
pub fn positive_probability(l_neg: f64, l_pos: f64) -> f64 {
    let z = l_pos - l_neg;
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let ez = z.exp();
        ez / (1.0 + ez)
    }
}

/// Fused softmax + multi-task loss with analytic gradients.
pub fn multitask_loss_from_logits(batch: CellBatch<'_>, cfg: &LossConfig) -> Result<(LossReport, OutputGrads)> {
    let n = batch.labels.len();
    if batch.logits.len() != 2 * n
        || batch.reg_pred.len() != 4 * n
        || batch.reg_target.len() != 4 * n
        || batch.eligible.is_some_and(|m| m.len() != n)
    {
        return Err(Error::Shape(format!(
            "cell batch of {n} labels has {} logits, {} predictions, {} targets",
            batch.logits.len(),
            batch.reg_pred.len(),
            batch.reg_target.len()
        )));
    }
    let is_eligible = |i: usize| batch.eligible.is_none_or(|m| m[i]);
    let n_eligible = (0..n).filter(|&i| is_eligible(i)).count();
    let n_pos = (0..n)
        .filter(|&i| is_eligible(i) && batch.labels[i] == 1)
        .count();

    let mut grads = OutputGrads {
        logits: vec![0.0; 2 * n],
        reg: vec![0.0; 4 * n],
    };
    let mut cls_sum = 0.0;
    let mut reg_sum = 0.0;
    let cls_scale = if n_eligible > 0 { 1.0 / n_eligible as f64 } else { 0.0 };
    let reg_scale = if n_pos > 0 {
        cfg.lambda / n_pos as f64
    } else {
        0.0
    };
    for i in 0..n {
        if !is_eligible(i) {
            continue;
        }
        let y = batch.labels[i];
        let p = positive_probability(batch.logits[2 * i], batch.logits[2 * i + 1]);
        cls_sum += classification_loss(p, y, cfg);
        let dp = classification_grad_p(p, y, cfg) * cls_scale;
        let dz = dp * p * (1.0 - p);
        grads.logits[2 * i] = -dz;
        grads.logits[2 * i + 1] = dz;
        if y == 1 {
            let e: [f64; 4] = std::array::from_fn(|k| batch.reg_pred[4 * i + k]);
            let t: [f64; 4] = std::array::from_fn(|k| batch.reg_target[4 * i + k]);
            let (l, g) = regression_loss_and_grad(e, t, cfg);
            reg_sum += l;
            for k in 0..4 {
                grads.reg[4 * i + k] = g[k] * reg_scale;
            }
        }
    }
    let cls_term = cls_sum * cls_scale;
    Ok((report(cls_term, reg_sum, n_pos, cfg), grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{Array2, Array3};
    use proptest::prelude::*;

    #[test]
    fn focal_scalar_values() {
        assert_abs_diff_eq!(focal_loss(0.5, 1, 0.0, 0.5), 0.5 * 2f64.ln(), epsilon = 1e-12);
        let expect = -0.25 * 0.01 * 0.9f64.ln();
        assert_abs_diff_eq!(focal_loss(0.9, 1, 2.0, 0.25), expect, epsilon = 1e-15);
        assert_abs_diff_eq!(expect, 2.6341e-4, epsilon = 1e-8);
        assert!(focal_loss(1.0 - 1e-9, 1, 2.0, 0.25) < 1e-12);
        assert!(focal_loss(1e-9, -1, 2.0, 0.25) < 1e-12);
    }

    #[test]
    fn endpoint_error_examples() {
        let t = [0.1, 0.2, 0.7, 0.9];
        assert_eq!(endpoint_error(t, t), 0.0);
        assert_eq!(endpoint_error(swap_endpoints(t), t), 0.0);
        assert_eq!(endpoint_error([0.0; 4], [1.0; 4]), 4.0);
    }

    #[test]
    fn wing_examples() {
        assert_eq!(wing_loss(0.0, 10.0, 2.0), 0.0);
        let knee = 10.0 * 6f64.ln();
        assert_abs_diff_eq!(wing_loss(10.0, 10.0, 2.0), knee, epsilon = 1e-12);
        assert_abs_diff_eq!(wing_constant(10.0, 2.0), 10.0 - knee, epsilon = 1e-12);
        assert_abs_diff_eq!(wing_loss(20.0, 10.0, 2.0), 20.0 - (10.0 - knee), epsilon = 1e-12);
        assert_abs_diff_eq!(wing_loss(20.0, 10.0, 2.0), 27.9176, epsilon = 1e-4);
    }

    #[test]
    fn multitask_examples() {
        let probs = Array2::<f32>::from_elem((3, 3), 0.2);
        let mut labels = Array2::<i8>::from_elem((3, 3), -1);
        let pred = Array3::<f32>::from_elem((3, 3, 4), 0.3);
        let target = Array3::<f32>::zeros((3, 3, 4));
        let cfg0 = LossConfig {
            lambda: 0.0,
            ..Default::default()
        };
        let r = multitask_loss(probs.view(), labels.view(), pred.view(), target.view(), &cfg0).unwrap();
        assert_eq!(r.total, r.cls_term);

        let cfg = LossConfig::default();
        let r = multitask_loss(probs.view(), labels.view(), pred.view(), target.view(), &cfg).unwrap();
        assert_eq!(r.reg_term, 0.0);
        assert_eq!(r.positive_cell_count, 0);

        // one positive cell, perfectly predicted and confident
        let mut probs = probs.clone();
        let mut pred = Array3::<f32>::zeros((3, 3, 4));
        let mut target = Array3::<f32>::zeros((3, 3, 4));
        labels[[1, 1]] = 1;
        probs[[1, 1]] = 1.0;
        for k in 0..4 {
            target[[1, 1, k]] = 0.25 * k as f32;
            pred[[1, 1, k]] = 0.25 * k as f32;
        }
        let r = multitask_loss(probs.view(), labels.view(), pred.view(), target.view(), &cfg).unwrap();
        let neg = focal_loss(0.2, -1, 2.0, 0.25);
        let pos = focal_loss(1.0 - PROB_CLAMP, 1, 2.0, 0.25);
        assert_abs_diff_eq!(r.total, (8.0 * neg + pos) / 9.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.total, 8.0 * neg / 9.0, epsilon = 1e-9);
        assert_eq!(r.reg_term, 0.0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let probs = Array2::<f32>::zeros((3, 3));
        let labels = Array2::<i8>::zeros((3, 2));
        let pred = Array3::<f32>::zeros((3, 3, 4));
        assert!(matches!(
            multitask_loss(probs.view(), labels.view(), pred.view(), pred.view(), &LossConfig::default()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::default().validate().is_ok());
        for bad in [
            LossConfig { gamma: -1.0, ..Default::default() },
            LossConfig { alpha: 1.5, ..Default::default() },
            LossConfig { wing_w: 0.0, ..Default::default() },
            LossConfig { wing_epsilon: -2.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn fused_matches_probability_form() {
        let logits = [0.3, -0.2, 1.5, 0.1, -0.7, 2.0];
        let labels = [-1i8, 1, 1];
        let pred = [0.1, 0.2, 0.3, 0.4, 0.9, 0.8, 0.1, 0.2, 0.5, 0.5, 0.5, 0.5];
        let target = [0.0, 0.0, 0.0, 0.0, 0.1, 0.2, 0.9, 0.7, 0.4, 0.6, 0.2, 0.3];
        for reg_variant in [RegressionLoss::Wing, RegressionLoss::L1, RegressionLoss::L2, RegressionLoss::SmoothL1] {
            let cfg = LossConfig { reg_variant, ..Default::default() };
            let (rep, _) = multitask_loss_from_logits(
                CellBatch { logits: &logits, labels: &labels, reg_pred: &pred, reg_target: &target, eligible: None },
                &cfg,
            )
            .unwrap();
            let probs = Array2::from_shape_fn((1, 3), |(_, j)| {
                positive_probability(logits[2 * j], logits[2 * j + 1]) as f32
            });
            let lab = Array2::from_shape_vec((1, 3), labels.to_vec()).unwrap();
            let p = Array3::from_shape_fn((1, 3, 4), |(_, j, k)| pred[4 * j + k] as f32);
            let t = Array3::from_shape_fn((1, 3, 4), |(_, j, k)| target[4 * j + k] as f32);
            let r2 = multitask_loss(probs.view(), lab.view(), p.view(), t.view(), &cfg).unwrap();
            assert_abs_diff_eq!(rep.total, r2.total, epsilon = 1e-6);
            assert_eq!(rep.positive_cell_count, 2);
        }
    }

    #[test]
    fn ineligible_cells_do_not_contribute() {
        let logits = [0.3, -0.2, 1.5, 0.1];
        let labels = [-1i8, 1];
        let pred = [0.0; 8];
        let target = [0.5; 8];
        let cfg = LossConfig::default();
        let (rep, g) = multitask_loss_from_logits(
            CellBatch { logits: &logits, labels: &labels, reg_pred: &pred, reg_target: &target, eligible: Some(&[true, false]) },
            &cfg,
        )
        .unwrap();
        assert_eq!(rep.positive_cell_count, 0);
        assert_eq!(rep.reg_term, 0.0);
        assert_abs_diff_eq!(rep.cls_term, focal_loss(positive_probability(0.3, -0.2), -1, 2.0, 0.25), epsilon = 1e-12);
        assert!(g.logits[2..].iter().all(|&v| v == 0.0));
        assert!(g.reg.iter().all(|&v| v == 0.0));
    }

    proptest! {
        #[test]
        fn focal_gamma0_is_half_ce(p in 1e-6f64..1.0 - 1e-6, pos in any::<bool>()) {
            let y = if pos { 1 } else { -1 };
            let pt: f64 = if pos { p } else { 1.0 - p };
            let ce = -pt.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln();
            prop_assert!((focal_loss(p, y, 0.0, 0.5) - 0.5 * ce).abs() <= 1e-12 * ce.max(1.0));
        }

        #[test]
        fn endpoint_error_is_swap_symmetric(e in prop::array::uniform4(-2.0f64..2.0), t in prop::array::uniform4(-2.0f64..2.0)) {
            let d = endpoint_error(e, t);
            prop_assert!((d - endpoint_error(swap_endpoints(e), t)).abs() < 1e-12);
            prop_assert!((d - endpoint_error(e, swap_endpoints(t))).abs() < 1e-12);
        }

        #[test]
        fn focal_decreases_in_pt(a in 0.001f64..0.998, b in 0.001f64..0.998, gamma in 0.0f64..5.0) {
            prop_assume!((a - b).abs() > 1e-6);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(focal_loss(lo, 1, gamma, 0.25) > focal_loss(hi, 1, gamma, 0.25));
            prop_assert!(focal_loss(1.0 - lo, -1, gamma, 0.25) > focal_loss(1.0 - hi, -1, gamma, 0.25));
        }

        #[test]
        fn wing_increases_in_d(a in 0.0f64..40.0, b in 0.0f64..40.0) {
            prop_assume!((a - b).abs() > 1e-9);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(wing_loss(lo, 10.0, 2.0) < wing_loss(hi, 10.0, 2.0));
        }

        #[test]
        fn reg_term_ignores_target_endpoint_order(e in prop::array::uniform4(0.0f64..1.0), t in prop::array::uniform4(0.0f64..1.0)) {
            for reg_variant in [RegressionLoss::Wing, RegressionLoss::L1, RegressionLoss::L2, RegressionLoss::SmoothL1] {
                let cfg = LossConfig { reg_variant, ..Default::default() };
                let a = regression_loss(e, t, &cfg);
                let b = regression_loss(e, swap_endpoints(t), &cfg);
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
