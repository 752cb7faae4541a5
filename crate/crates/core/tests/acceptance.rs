//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line.

mod common;

use std::io::Write;
use std::time::Instant;

use lsnet::gridcodec::{
    clip_segment_to_box, decode_predictions, encode_targets, CellBox, GridSet, GridSpec, LineSegment, ParityMask,
    DEFAULT_MIN_PIECE_LEN,
};
use lsnet::loss::{
    cross_entropy, focal_loss, multitask_loss_from_logits, wing_loss, CellBatch, ClassificationLoss, LossConfig,
    RegressionLoss,
};
use lsnet::model::{Mode, Model, ModelConfig};
use lsnet::metrics::EvalResult;
use lsnet::postprocess::{bresenham_8, otsu_binarize, Binarization, MapKind, SegmentationMap};
use lsnet::synthdata::{AugmentConfig, SampleRecord, SceneParams, SceneRenderer};
use lsnet::training::{
    ablation_variants, evaluate_predictions, evaluate_records, run_ablation_matrix, AblationAxis, EvalConfig, TrainConfig,
    Trainer, Variant,
};
use ndarray::{Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{clip_oracle, report, report_verdict, serial};

// criterion 1

#[test]
fn criterion_1_codec_round_trip() {
    let _serial = serial();
    let renderer = SceneRenderer::new(SceneParams::default()).unwrap();
    let size = 256;
    let cell = ModelConfig::desk().cell_size();
    let spec = GridSpec::new(size, cell).unwrap();
    let tol = 1e-6 * cell as f64;
    let mut worst = 0.0f64;
    let mut positives = 0usize;
    let mut mismatched = 0usize;
    let mut codec = std::time::Duration::ZERO;
    for seed in 0..1000 {
        let segs = renderer.render(size, seed).unwrap().segments;
        let start = Instant::now();
        let t = encode_targets(&segs, &spec, DEFAULT_MIN_PIECE_LEN);
        let probs = t.labels.mapv(|y| if y == 1 { 1.0f32 } else { 0.0 });
        let decoded = decode_predictions(probs.view(), t.coords.view(), &spec, 0.5).unwrap();
        codec += start.elapsed();
        let mut it = decoded.iter();
        for pos in spec.positions() {
            let bx = spec.cell_box(pos).unwrap();
            let oracle = longest_piece(&segs, &bx);
            match (t.is_positive(pos), oracle) {
                (true, Some(candidates)) => {
                    positives += 1;
                    let d = it.next().unwrap();
                    let err = candidates.iter().map(|p| d.order_free_distance(p)).fold(f64::INFINITY, f64::min);
                    worst = worst.max(err);
                }
                (false, None) => {}
                _ => mismatched += 1,
            }
        }
        assert!(it.next().is_none());
    }
    let secs = codec.as_secs_f64();
    let pass = worst < tol && mismatched == 0 && secs < 60.0;
    report(
        1,
        pass,
        &format!(
            "codec round trip: 1000 scenes, {positives} positive cells, max error {worst:.3e} px (< {tol:.1e}), \
             {mismatched} label mismatches, encode+decode {secs:.2} s"
        ),
    );
    assert!(pass);
}

/// Every clipped piece tied (within 1e-9 px) for longest above the length floor.
fn longest_piece(segs: &[LineSegment], bx: &CellBox) -> Option<Vec<LineSegment>> {
    let pieces: Vec<LineSegment> = segs
        .iter()
        .filter_map(|s| clip_oracle(s, bx))
        .filter(|p| p.length() > DEFAULT_MIN_PIECE_LEN)
        .collect();
    let best = pieces.iter().map(|p| p.length()).fold(f64::NEG_INFINITY, f64::max);
    let out: Vec<LineSegment> = pieces.into_iter().filter(|p| p.length() >= best - 1e-9).collect();
    (!out.is_empty()).then_some(out)
}

// criterion 2

#[test]
fn criterion_2_four_grid_coverage() {
    let _serial = serial();
    let size = 256;
    let cell = ModelConfig::desk().cell_size();
    let spec = GridSpec::new(size, cell).unwrap();
    let main = GridSet::parse("M").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut n, mut four, mut main_only) = (0usize, 0usize, 0usize);
    for gy in 1..spec.main_cells {
        for gx in 1..spec.main_cells {
            let (cx, cy) = ((gx * cell) as f64, (gy * cell) as f64);
            for _ in 0..8 {
                let len = rng.random_range(DEFAULT_MIN_PIECE_LEN + 0.5..cell as f64 - 0.5);
                let a = rng.random_range(0.0..std::f64::consts::PI);
                let (hx, hy) = (0.5 * len * a.cos(), 0.5 * len * a.sin());
                let seg = LineSegment::new(cx - hx, cy - hy, cx + hx, cy + hy);
                let t = encode_targets(&[seg], &spec, DEFAULT_MIN_PIECE_LEN);
                n += 1;
                four += usize::from(t.positive_count() > 0);
                main_only += usize::from(t.mask_parity_classes(main).unwrap().positive_count() > 0);
            }
        }
    }
    let pass = four == n && main_only < n;
    report(
        2,
        pass,
        &format!(
            "corner stress: {n} segments, four-grid coverage {:.1}%, main-only coverage {:.1}%",
            100.0 * four as f64 / n as f64,
            100.0 * main_only as f64 / n as f64
        ),
    );
    assert!(pass);
}

// criterion 3

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-9 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)` over one gradient vector.
fn vector_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Whether `e` against `t` sits within `band` of a kink or knee of the penalty.
fn near_kink(e: &[f64], t: &[f64], cfg: &LossConfig, band: f64) -> bool {
    let direct: f64 = (0..4).map(|k| (e[k] - t[k]).abs()).sum();
    let swapped = [e[2], e[3], e[0], e[1]];
    let crossed: f64 = (0..4).map(|k| (swapped[k] - t[k]).abs()).sum();
    let (a, d) = if direct <= crossed { (e.to_vec(), direct) } else { (swapped.to_vec(), crossed) };
    (direct - crossed).abs() < band
        || (0..4).any(|k| (a[k] - t[k]).abs() < band)
        || (d - cfg.wing_w).abs() < band
        || (d - 1.0).abs() < band
}

#[test]
fn criterion_3_loss_numerics() {
    let _serial = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-4;
    let band = 1e-2;
    let variants = [
        (ClassificationLoss::Focal, RegressionLoss::Wing, 10.0, 2.0),
        (ClassificationLoss::CrossEntropy, RegressionLoss::L1, 10.0, 2.0),
        (ClassificationLoss::Focal, RegressionLoss::SmoothL1, 10.0, 2.0),
        (ClassificationLoss::Focal, RegressionLoss::L2, 10.0, 2.0),
        (ClassificationLoss::Focal, RegressionLoss::Wing, 1.0, 0.5),
    ];
    let mut worst_grad = 0.0f64;
    let mut points = 0usize;
    while points < 100 {
        let (cls, reg, w, eps) = variants[points % variants.len()];
        let cfg = LossConfig {
            cls_variant: cls,
            reg_variant: reg,
            wing_w: w,
            wing_epsilon: eps,
            gamma: rng.random_range(0.0..3.0),
            alpha: rng.random_range(0.05..0.95),
            lambda: rng.random_range(0.1..2.0),
        };
        let n = 3;
        let logits: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-4.0..4.0)).collect();
        let labels: Vec<i8> = (0..n).map(|i| if i == 0 || rng.random_bool(0.5) { 1 } else { -1 }).collect();
        let scale = if reg == RegressionLoss::Wing && w > 5.0 { 8.0 } else { 1.5 };
        let reg_pred: Vec<f64> = (0..4 * n).map(|_| rng.random_range(-scale..scale)).collect();
        let reg_target: Vec<f64> = (0..4 * n).map(|_| rng.random_range(0.0..1.0)).collect();
        if (0..n).any(|i| {
            labels[i] == 1 && near_kink(&reg_pred[4 * i..4 * i + 4], &reg_target[4 * i..4 * i + 4], &cfg, band)
        }) {
            continue;
        }
        let eval = |lg: &[f64], rp: &[f64]| {
            let b = CellBatch {
                logits: lg,
                labels: &labels,
                reg_pred: rp,
                reg_target: &reg_target,
                eligible: None,
            };
            multitask_loss_from_logits(b, &cfg).unwrap()
        };
        let (_, g) = eval(&logits, &reg_pred);
        let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
        for k in 0..logits.len() {
            let (mut p, mut m) = (logits.clone(), logits.clone());
            p[k] += h;
            m[k] -= h;
            let fd = (eval(&p, &reg_pred).0.total - eval(&m, &reg_pred).0.total) / (2.0 * h);
            analytic.push(g.logits[k]);
            numeric.push(fd);
        }
        for k in 0..reg_pred.len() {
            let (mut p, mut m) = (reg_pred.clone(), reg_pred.clone());
            p[k] += h;
            m[k] -= h;
            let fd = (eval(&logits, &p).0.total - eval(&logits, &m).0.total) / (2.0 * h);
            analytic.push(g.reg[k]);
            numeric.push(fd);
        }
        worst_grad = worst_grad.max(vector_rel_err(&analytic, &numeric));
        points += 1;
    }

    let mut worst_wing = 0.0f64;
    for (w, eps) in [(10.0, 2.0), (1.0, 0.5), (5.0, 1.0), (0.5, 3.0)] {
        let left: f64 = w * (1.0f64 + w / eps).ln();
        worst_wing = worst_wing.max(rel_err(wing_loss(w, w, eps), left));
        worst_wing = worst_wing.max(rel_err(wing_loss(w * (1.0 - 1e-15), w, eps), left));
    }

    let mut worst_focal = 0.0f64;
    for _ in 0..1000 {
        let p = rng.random_range(1e-6..1.0 - 1e-6);
        let y = if rng.random_bool(0.5) { 1 } else { -1 };
        worst_focal = worst_focal.max(rel_err(focal_loss(p, y, 0.0, 0.5), 0.5 * cross_entropy(p, y)));
    }

    let pass = worst_grad < 1e-3 && worst_wing < 1e-12 && worst_focal < 1e-12;
    report(
        3,
        pass,
        &format!(
            "loss numerics: gradient vs finite difference max relative error {worst_grad:.2e} over 100 points, \
             wing knee continuity {worst_wing:.1e}, focal(gamma 0, alpha 0.5) vs half CE {worst_focal:.1e}"
        ),
    );
    assert!(pass);
}

// criterion 4

fn otsu_oracle(levels: &Array2<u8>) -> usize {
    let mut hist = [0f64; 256];
    for &v in levels.iter() {
        hist[v as usize] += 1.0;
    }
    let n: f64 = hist.iter().sum();
    let mut best = (f64::NEG_INFINITY, 0usize);
    for t in 0..256 {
        let n0: f64 = hist[..=t].iter().sum();
        let n1 = n - n0;
        if n0 == 0.0 || n1 == 0.0 {
            continue;
        }
        let m0 = hist[..=t].iter().enumerate().map(|(i, h)| i as f64 * h).sum::<f64>() / n0;
        let m1 = hist[t + 1..].iter().enumerate().map(|(i, h)| (i + t + 1) as f64 * h).sum::<f64>() / n1;
        let var = (n0 / n) * (n1 / n) * (m0 - m1) * (m0 - m1);
        if var > best.0 * (1.0 + 1e-12) {
            best = (var, t);
        }
    }
    best.1
}

/// Nearest-pixel line by exact rational rounding, ties toward the start.
fn midpoint_oracle(p0: (i64, i64), p1: (i64, i64)) -> Vec<(i64, i64)> {
    let (dx, dy) = ((p1.0 - p0.0).abs(), (p1.1 - p0.1).abs());
    let x_major = dx >= dy;
    let reversed = if x_major { p1.0 < p0.0 } else { p1.1 < p0.1 };
    let (a, b) = if reversed { (p1, p0) } else { (p0, p1) };
    let (major, minor) = if x_major { (dx, dy) } else { (dy, dx) };
    let sign = if x_major { (b.1 - a.1).signum() } else { (b.0 - a.0).signum() };
    let mut pts: Vec<(i64, i64)> = (0..=major)
        .map(|i| {
            let off = if major == 0 { 0 } else { (2 * minor * i + major - 1) / (2 * major) };
            if x_major {
                (a.0 + i, a.1 + sign * off)
            } else {
                (a.0 + sign * off, a.1 + i)
            }
        })
        .collect();
    if reversed {
        pts.reverse();
    }
    pts
}

#[test]
fn criterion_4_oracle_equivalences() {
    let _serial = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(4);

    let mut otsu_bad = 0;
    for _ in 0..100 {
        let (w, h) = (rng.random_range(8..64), rng.random_range(8..64));
        let (c0, c1) = (rng.random_range(0.0..120.0), rng.random_range(100.0..255.0));
        let frac = rng.random_range(0.05..0.6);
        let levels = Array2::from_shape_fn((h, w), |_| {
            let c: f64 = if rng.random_bool(frac) { c1 } else { c0 };
            (c + rng.random_range(-40.0..40.0)).round().clamp(0.0, 255.0) as u8
        });
        let map = SegmentationMap {
            values: levels.mapv(|v| v as f32 / 255.0),
            kind: MapKind::Confidence,
        };
        let (bin, t) = otsu_binarize(&map);
        let expect = otsu_oracle(&levels);
        let same_map = bin.values.iter().zip(levels.iter()).all(|(&b, &l)| (b > 0.0) == (l as usize > expect));
        if (t * 255.0).round() as usize != expect || !same_map {
            otsu_bad += 1;
        }
    }

    let mut line_bad = 0;
    for _ in 0..1000 {
        let p0 = (rng.random_range(-50..50), rng.random_range(-50..50));
        let p1 = (rng.random_range(-50..50), rng.random_range(-50..50));
        if bresenham_8(p0, p1) != midpoint_oracle(p0, p1) {
            line_bad += 1;
        }
    }

    let mut clip_bad = 0;
    for _ in 0..1000 {
        let bx = CellBox::new(
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
            rng.random_range(1.0..30.0),
            rng.random_range(1.0..30.0),
        );
        let seg = LineSegment::new(
            rng.random_range(-30.0..50.0),
            rng.random_range(-30.0..50.0),
            rng.random_range(-30.0..50.0),
            rng.random_range(-30.0..50.0),
        );
        if !clip_membership_ok(&seg, &bx, 2000) {
            clip_bad += 1;
        }
    }

    let pass = otsu_bad == 0 && line_bad == 0 && clip_bad == 0;
    report(
        4,
        pass,
        &format!(
            "oracles: Otsu {otsu_bad}/100 mismatches, Bresenham {line_bad}/1000 mismatches, \
             clipping {clip_bad}/1000 membership failures"
        ),
    );
    assert!(pass);
}

/// Dense samples of the clipped piece lie in the box and on the segment; dense
/// samples of the segment that lie well inside the box are covered by the piece.
fn clip_membership_ok(seg: &LineSegment, bx: &CellBox, n: usize) -> bool {
    let tol = 1e-9 * (1.0 + seg.length());
    let inside = |x: f64, y: f64, m: f64| x >= bx.x0 + m && x <= bx.x1() - m && y >= bx.y0 + m && y <= bx.y1() - m;
    let piece = clip_segment_to_box(seg, bx);
    let (dx, dy) = (seg.x2 - seg.x1, seg.y2 - seg.y1);
    let len2 = dx * dx + dy * dy;
    let param = |x: f64, y: f64| ((x - seg.x1) * dx + (y - seg.y1) * dy) / len2;
    let interior = (0..=n).map(|i| seg.point_at(i as f64 / n as f64)).filter(|&(x, y)| inside(x, y, 1e-6)).count();
    match piece {
        None => interior == 0,
        Some(p) => {
            for i in 0..=n {
                let (x, y) = p.point_at(i as f64 / n as f64);
                let cross = (x - seg.x1) * dy - (y - seg.y1) * dx;
                if !inside(x, y, -tol) || cross.abs() > tol * len2.sqrt() {
                    return false;
                }
            }
            let (ta, tb) = (param(p.x1, p.y1), param(p.x2, p.y2));
            let (lo, hi) = (ta.min(tb) - 1e-9, ta.max(tb) + 1e-9);
            (0..=n).all(|i| {
                let t = i as f64 / n as f64;
                let (x, y) = seg.point_at(t);
                !inside(x, y, 1e-6) || (lo..=hi).contains(&t)
            })
        }
    }
}

// criterion 5

const DESK_TRAIN_SEEDS: std::ops::Range<u64> = 0..200;
const DESK_VAL_SEEDS: std::ops::Range<u64> = 10_000..10_050;
const DESK_TEST_SEEDS: std::ops::Range<u64> = 20_000..20_050;

/// The bundled desk dataset, regenerated from fixed seeds.
fn desk_data() -> (Vec<SampleRecord>, Vec<SampleRecord>, Vec<SampleRecord>) {
    let r = SceneRenderer::new(SceneParams::default()).unwrap();
    let size = ModelConfig::desk().input_size;
    let render = |seeds: std::ops::Range<u64>| seeds.map(|s| r.render(size, s).unwrap()).collect::<Vec<_>>();
    (render(DESK_TRAIN_SEEDS), render(DESK_VAL_SEEDS), render(DESK_TEST_SEEDS))
}

#[test]
fn criterion_5_desk_scale_learning() {
    let _serial = serial();
    let (train, val, test) = desk_data();
    let start = Instant::now();
    let cfg = TrainConfig {
        max_epochs: 1000,
        early_stop_patience: 1000,
        time_budget_secs: Some(1740.0),
        ..TrainConfig::desk()
    };
    let out = Trainer::new(Model::init(ModelConfig::desk(), 0).unwrap(), cfg)
        .unwrap()
        .run(&train, &val, None)
        .unwrap();
    let result = evaluate_records(&out.model, &test, &EvalConfig::default()).unwrap();
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    let learned = result.f1 >= 0.60 && minutes <= 30.0;

    let overfit_loss = overfit_one_batch(&train);
    let overfit = overfit_loss < 0.01;

    report(
        5,
        learned && overfit,
        &format!(
            "desk F1 {:.4} (APR {:.4}, ARR {:.4}) on {} held-out images after {} steps in {minutes:.1} min; \
             overfit-one-batch min loss {overfit_loss:.4} in 500 steps (need < 0.01)",
            result.f1,
            result.apr,
            result.arr,
            result.n_images,
            out.steps
        ),
    );
    assert!(learned, "desk F1 {} after {minutes:.1} min", result.f1);
    assert!(overfit, "overfit-one-batch loss {overfit_loss}");
}

/// Smallest loss seen in 500 un-augmented steps on one fixed batch (the first
/// training image holding segments).
fn overfit_one_batch(train: &[SampleRecord]) -> f64 {
    let batch: Vec<SampleRecord> = train.iter().find(|r| !r.segments.is_empty()).cloned().into_iter().collect();
    let cfg = TrainConfig {
        learning_rate: 3e-4,
        batch_size: 1,
        augment: AugmentConfig::disabled(),
        ..TrainConfig::desk()
    };
    let mut trainer = Trainer::new(Model::init(ModelConfig::desk(), 0).unwrap(), cfg).unwrap();
    (0..500).map(|_| trainer.train_step(&batch).unwrap().total).fold(f64::INFINITY, f64::min)
}

// criterion 6

/// Result of a paired directional comparison over seeds.
struct Direction {
    label: &'static str,
    margins: Vec<f64>,
    /// Whether a zero margin satisfies the direction (`≥` rather than `>`).
    inclusive: bool,
}

impl Direction {
    fn mean(&self) -> f64 {
        self.margins.iter().sum::<f64>() / self.margins.len() as f64
    }

    /// Sample standard deviation of the per-seed margins.
    fn band(&self) -> f64 {
        let m = self.mean();
        let n = self.margins.len() as f64;
        (self.margins.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    }

    fn verdict(&self) -> &'static str {
        let (m, b) = (self.mean(), self.band());
        if m > b || (self.inclusive && m >= 0.0 && b == 0.0) {
            "holds"
        } else if m < -b {
            "reversed"
        } else {
            "inconclusive"
        }
    }
}

#[test]
fn criterion_6_directional_ablations() {
    let _serial = serial();
    let (train, val, test) = desk_data();
    let model = ModelConfig::desk();
    let base_train = TrainConfig {
        max_steps: Some(120),
        max_epochs: 1000,
        early_stop_patience: 1000,
        ..TrainConfig::desk()
    };
    let eval = EvalConfig {
        line_width: 1,
        binarization: Binarization::Fixed(0.5),
        sigma_s: 0.0,
        ..EvalConfig::default()
    };
    let pick = |axis, name: &str| {
        ablation_variants(axis, &model, &base_train, &eval)
            .into_iter()
            .find(|v| v.name == name)
            .unwrap()
    };
    let variants = [
        pick(AblationAxis::Grids, "LS-Net-4-MHVC"),
        pick(AblationAxis::Grids, "LS-Net-1-M"),
        pick(AblationAxis::RegLoss, "LS-Net-1 (L1)"),
        pick(AblationAxis::ClsLoss, "LS-Net-CE (Cross Entropy loss)"),
    ];
    // the base row is also the Wing row and the focal row
    assert_eq!(variants[0].train, pick(AblationAxis::RegLoss, "LS-Net-W (Wing loss)").train);
    assert_eq!(variants[0].train, pick(AblationAxis::ClsLoss, "LS-Net-FL (Focal Loss)").train);

    let mut scores: Vec<Vec<EvalResult>> = vec![Vec::new(); variants.len()];
    for seed in 0..3 {
        let seeded: Vec<Variant> = variants
            .iter()
            .map(|v| {
                let mut v = v.clone();
                v.train.seed = seed;
                v
            })
            .collect();
        for (i, (_, r)) in run_ablation_matrix(&seeded, &train, &val, &test, None).unwrap().into_iter().enumerate() {
            scores[i].push(r);
        }
    }
    let margin = |a: usize, b: usize, f: fn(&EvalResult) -> f64| -> Vec<f64> {
        scores[a].iter().zip(&scores[b]).map(|(x, y)| f(x) - f(y)).collect()
    };
    let directions = [
        Direction { label: "four-grid ARR > one-grid ARR", margins: margin(0, 1, |r| r.arr), inclusive: false },
        Direction { label: "four-grid F1 > one-grid F1", margins: margin(0, 1, |r| r.f1), inclusive: false },
        Direction { label: "Wing APR > L1 APR", margins: margin(0, 2, |r| r.apr), inclusive: false },
        Direction { label: "Focal F1 >= CE F1", margins: margin(0, 3, |r| r.f1), inclusive: true },
    ];
    let verdicts: Vec<&str> = directions.iter().map(Direction::verdict).collect();
    let detail: Vec<String> = directions
        .iter()
        .zip(&verdicts)
        .map(|(d, v)| format!("{}: margin {:+.4} vs band {:.4} ({v})", d.label, d.mean(), d.band()))
        .collect();
    // a direction that does not clear the noise band in its favor, including
    // a reversed one, is inconclusive at desk scale and does not fail the build
    let verdict = if verdicts.iter().all(|&v| v == "holds") { "PASS" } else { "INCONCLUSIVE" };
    let suffix = if verdict == "INCONCLUSIVE" { " (inconclusive at desk scale)" } else { "" };
    report_verdict(6, verdict, &format!("{}{suffix}", detail.join("; ")));
    for (v, rs) in variants.iter().zip(&scores) {
        let f = |g: fn(&EvalResult) -> f64| rs.iter().map(g).map(|x| format!("{x:.4}")).collect::<Vec<_>>().join("/");
        let line = format!("    {}: APR {} ARR {} F1 {}", v.name, f(|r| r.apr), f(|r| r.arr), f(|r| r.f1));
        let _ = writeln!(std::io::stdout().lock(), "{line}");
    }
}

// criterion 7

#[test]
fn criterion_7_pipeline_identity() {
    let _serial = serial();
    let renderer = SceneRenderer::new(SceneParams::default()).unwrap();
    let records: Vec<_> = (0..20).map(|s| renderer.render(256, 700 + s).unwrap()).collect();
    let preds: Vec<Vec<LineSegment>> = records.iter().map(|r| r.segments.clone()).collect();
    let mut f1s = Vec::new();
    for wl in [1, 2, 3] {
        let cfg = EvalConfig {
            line_width: wl,
            sigma_s: 0.0,
            ..EvalConfig::default()
        };
        f1s.push(evaluate_predictions(&preds, &records, &cfg).unwrap().f1);
    }
    let pass = f1s.iter().all(|&f| f == 1.0);
    report(7, pass, &format!("pipeline identity: F1 for W_l 1/2/3 at sigma_s 0 = {f1s:?}"));
    assert!(pass);
}

// criterion 8

#[test]
fn criterion_8_shape_contract() {
    let _serial = serial();
    let mut got = Vec::new();
    for (cfg, side) in [(ModelConfig::default(), 31usize), (ModelConfig::desk(), 15)] {
        let s = cfg.input_size;
        let model = Model::zeros(cfg).unwrap();
        let out = model.forward(Array4::<f32>::zeros((1, s, s, 3)).view(), Mode::Eval).unwrap();
        got.push((s, out.class_logits.dim(), out.reg_out.dim(), side));
    }
    let pass = got.iter().all(|&(_, c, r, l)| c == (1, l, l, 2) && r == (1, l, l, 4));
    let detail: Vec<String> = got
        .iter()
        .map(|(s, c, r, _)| format!("{s} -> {}x{}x{} and {}x{}x{}", c.1, c.2, c.3, r.1, r.2, r.3))
        .collect();
    report(8, pass, &format!("shapes: {}", detail.join(", ")));
    assert!(pass);
}
