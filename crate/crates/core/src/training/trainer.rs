use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::gridcodec::{eligibility_mask, encode_targets, GridSet, GridSpec, TargetTensor};
use crate::loss::{multitask_loss_from_logits, CellBatch, LossReport};
use crate::model::{load_checkpoint, save_checkpoint, Checkpoint, Gradients, Model, ModelConfig, SampleOutput};
use crate::synthdata::{on_the_fly_augment, Dataset, SampleRecord};

pub const BEST_CHECKPOINT: &str = "best.safetensors";
pub const LAST_CHECKPOINT: &str = "last.safetensors";
pub const TRAIN_LOG: &str = "train_log.jsonl";

const SHUFFLE_STREAM: u64 = 1;
const AUGMENT_STREAM: u64 = 2;

/// Deterministic generator for `(seed, stream, index)`.
pub(crate) fn rng_for(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&stream.to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub epoch: usize,
    pub train_cls: f64,
    pub train_reg: f64,
    pub train_total: f64,
    /// Validation losses, present on evaluation steps.
    pub val_cls: Option<f64>,
    pub val_reg: Option<f64>,
    pub val_total: Option<f64>,
    pub lr: f64,
    /// Seconds since the Unix epoch.
    pub timestamp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    MaxSteps,
    TimeBudget,
    EarlyStopping,
}

/// Result of [`Trainer::run`]. `model` holds the best validated parameters.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub best_val_loss: f64,
    pub best_step: u64,
    pub steps: u64,
    pub log: Vec<LogRecord>,
    pub stop_reason: StopReason,
}

/// Fails with one error listing every image of `ds` that does not exist.
pub(crate) fn check_images(ds: &Dataset) -> Result<()> {
    let missing: Vec<PathBuf> = (0..ds.len()).map(|i| ds.image_path(i)).filter(|p| !p.is_file()).collect();
    if let Some(first) = missing.first() {
        let list: Vec<String> = missing.iter().map(|p| p.display().to_string()).collect();
        return Err(Error::io(
            first,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("{} missing image(s): {}", missing.len(), list.join(", ")),
            ),
        ));
    }
    Ok(())
}

/// Loads every record of `ds`, resized to `size × size`.
pub fn load_records(ds: &Dataset, size: usize) -> Result<Vec<SampleRecord>> {
    check_images(ds)?;
    (0..ds.len()).map(|i| ds.load(i, Some(size))).collect()
}

/// Flattens per-image outputs and targets into one cell batch.
struct Pooled {
    logits: Vec<f64>,
    labels: Vec<i8>,
    reg_pred: Vec<f64>,
    reg_target: Vec<f64>,
    eligible: Option<Vec<bool>>,
}

impl Pooled {
    fn new(outputs: &[SampleOutput], targets: &[TargetTensor], mask: Option<&[bool]>) -> Self {
        let mut p = Pooled {
            logits: Vec::new(),
            labels: Vec::new(),
            reg_pred: Vec::new(),
            reg_target: Vec::new(),
            eligible: mask.map(|_| Vec::new()),
        };
        for (o, t) in outputs.iter().zip(targets) {
            let plane = o.side * o.side;
            for i in 0..plane {
                p.logits.push(o.logits[i] as f64);
                p.logits.push(o.logits[plane + i] as f64);
                for k in 0..4 {
                    p.reg_pred.push(o.reg[k * plane + i] as f64);
                }
            }
            p.labels.extend(t.labels.iter());
            p.reg_target.extend(t.coords.iter().map(|&v| v as f64));
            if let (Some(e), Some(m)) = (p.eligible.as_mut(), mask) {
                e.extend_from_slice(m);
            }
        }
        p
    }

    fn batch(&self) -> CellBatch<'_> {
        CellBatch {
            logits: &self.logits,
            labels: &self.labels,
            reg_pred: &self.reg_pred,
            reg_target: &self.reg_target,
            eligible: self.eligible.as_deref(),
        }
    }
}

/// Owns the model and optimizer state during training.
pub struct Trainer {
    model: Model,
    adam: Adam,
    cfg: TrainConfig,
    spec: GridSpec,
    mask: Option<Vec<bool>>,
    best_val: f64,
    best_step: u64,
    best_model: Option<Model>,
    stale_evals: usize,
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        model.config().validate()?;
        let mc = model.config();
        let spec = GridSpec::new(mc.input_size, mc.cell_size())?;
        let mask = if cfg.grids == GridSet::ALL {
            None
        } else {
            if cfg.grids.is_empty() {
                return Err(Error::Config("grids must contain at least one parity class".into()));
            }
            Some(eligibility_mask(&spec, cfg.grids).iter().copied().collect())
        };
        let adam = Adam::new(&model, cfg.learning_rate, cfg.momentum1, cfg.momentum2);
        Ok(Self {
            model,
            adam,
            cfg,
            spec,
            mask,
            best_val: f64::INFINITY,
            best_step: 0,
            best_model: None,
            stale_evals: 0,
        })
    }

    /// Continues from a checkpoint: parameters, step counter, optimizer
    /// moments (when stored) and the best validation loss so far.
    pub fn from_checkpoint(ck: Checkpoint, cfg: TrainConfig) -> Result<Self> {
        let Checkpoint {
            model,
            step,
            moments,
            extra,
        } = ck;
        let mut t = Self::new(model, cfg)?;
        if let Some(m) = moments {
            t.adam = t.adam.clone().with_state(step, m)?;
        } else {
            t.adam.t = step;
        }
        if let Some(v) = extra.get("best_val_loss").and_then(|s| s.parse::<f64>().ok()) {
            t.best_val = v;
        }
        if let Some(v) = extra.get("best_step").and_then(|s| s.parse::<u64>().ok()) {
            t.best_step = v;
        }
        Ok(t)
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Optimizer steps taken so far.
    pub fn step(&self) -> u64 {
        self.adam.t
    }

    fn targets(&self, segments: &[crate::gridcodec::LineSegment]) -> TargetTensor {
        encode_targets(segments, &self.spec, self.cfg.min_piece_len)
    }

    fn check_size(&self, img: &Array3<f32>) -> Result<()> {
        let s = self.model.config().input_size;
        let (h, w, _) = img.dim();
        if (h, w) != (s, s) {
            return Err(Error::Shape(format!("training images must be {s}×{s}, got {w}×{h}")));
        }
        Ok(())
    }

    /// One Adam update on `batch`. Each record is augmented with a generator
    /// derived from the seed, the step and its position in the batch.
    pub fn train_step(&mut self, batch: &[SampleRecord]) -> Result<LossReport> {
        if batch.is_empty() {
            return Err(Error::Empty("training batch".into()));
        }
        let step = self.adam.t;
        let mut outputs = Vec::with_capacity(batch.len());
        let mut tapes = Vec::with_capacity(batch.len());
        let mut targets = Vec::with_capacity(batch.len());
        for (k, rec) in batch.iter().enumerate() {
            self.check_size(&rec.image)?;
            let mut rng = rng_for(self.cfg.seed, AUGMENT_STREAM, step * batch.len() as u64 + k as u64);
            let (aug, _) = on_the_fly_augment(rec, &self.cfg.augment, &mut rng)?;
            targets.push(self.targets(&aug.segments));
            let (out, tape) = self.model.forward_sample(aug.image.view(), true)?;
            outputs.push(out);
            tapes.push(tape.expect("requested"));
        }
        let pooled = Pooled::new(&outputs, &targets, self.mask.as_deref());
        let (report, og) = multitask_loss_from_logits(pooled.batch(), &self.cfg.loss)?;
        if !report.total.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!("loss is {} (cls {}, reg {})", report.total, report.cls_term, report.reg_term),
            });
        }
        let mut grads = Gradients::zeros_like(&self.model);
        let mut offset = 0;
        for (out, tape) in outputs.iter().zip(tapes) {
            let plane = out.side * out.side;
            let mut dl = vec![0f32; 2 * plane];
            let mut dr = vec![0f32; 4 * plane];
            for i in 0..plane {
                let c = offset + i;
                dl[i] = og.logits[2 * c] as f32;
                dl[plane + i] = og.logits[2 * c + 1] as f32;
                for k in 0..4 {
                    dr[k * plane + i] = og.reg[4 * c + k] as f32;
                }
            }
            self.model.backward_sample(tape, &dl, &dr, &mut grads)?;
            offset += plane;
        }
        if !grads.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: "non-finite gradient".into(),
            });
        }
        self.adam.step(&mut self.model, &grads)?;
        Ok(report)
    }

    /// Loss of the current model pooled over all cells of `records`, without
    /// augmentation.
    pub fn validation_loss(&self, records: &[SampleRecord]) -> Result<LossReport> {
        validation_loss(&self.model, records, &self.cfg)
    }

    fn extra(&self, epoch: usize) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("best_val_loss".to_string(), format!("{:e}", self.best_val)),
            ("best_step".to_string(), self.best_step.to_string()),
            ("epoch".to_string(), epoch.to_string()),
            (
                "train_config".to_string(),
                serde_json::to_string(&self.cfg).expect("config serializes"),
            ),
        ])
    }

    /// Evaluates on `val`; returns the report and whether it improved.
    fn evaluate(&mut self, val: &[SampleRecord], epoch: usize, out_dir: Option<&Path>) -> Result<(LossReport, bool)> {
        let v = self.validation_loss(val)?;
        if !v.total.is_finite() {
            return Err(Error::Diverged {
                step: self.adam.t,
                detail: format!("validation loss is {}", v.total),
            });
        }
        let improved = v.total < self.best_val;
        if improved {
            self.best_val = v.total;
            self.best_step = self.adam.t;
            self.best_model = Some(self.model.clone());
            self.stale_evals = 0;
            if let Some(dir) = out_dir {
                save_checkpoint(
                    &dir.join(BEST_CHECKPOINT),
                    &self.model,
                    self.adam.t,
                    Some(&self.adam.moments),
                    &self.extra(epoch),
                )?;
            }
        } else {
            self.stale_evals += 1;
        }
        Ok((v, improved))
    }

    /// Trains on shuffled mini-batches of `train` until a stopping rule
    /// fires, validating every `eval_interval` steps and once at the end.
    ///
    /// With `out_dir`, the best checkpoint, a final resumable checkpoint and
    /// the JSON-lines log are written there; an existing log is appended to
    /// when the trainer was restored from a checkpoint.
    pub fn run(mut self, train: &[SampleRecord], val: &[SampleRecord], out_dir: Option<&Path>) -> Result<TrainOutcome> {
        if train.is_empty() {
            return Err(Error::Empty("training set".into()));
        }
        if val.is_empty() {
            return Err(Error::Empty("validation set".into()));
        }
        let mut log_file = match out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let path = dir.join(TRAIN_LOG);
                let file = std::fs::OpenOptions::new()
                    .create(true)
                    .write(true)
                    .append(self.adam.t > 0)
                    .truncate(self.adam.t == 0)
                    .open(&path)
                    .map_err(|e| Error::io(&path, e))?;
                Some((path, std::io::BufWriter::new(file)))
            }
            None => None,
        };
        let started = Instant::now();
        let bs = self.cfg.batch_size;
        let per_epoch = train.len().div_ceil(bs) as u64;
        let mut log = Vec::new();
        let mut last_eval_step = None;
        let mut epoch = (self.adam.t / per_epoch) as usize;
        let mut stop = StopReason::MaxEpochs;
        'outer: while epoch < self.cfg.max_epochs {
            let mut order: Vec<usize> = (0..train.len()).collect();
            order.shuffle(&mut rng_for(self.cfg.seed, SHUFFLE_STREAM, epoch as u64));
            let skip = (self.adam.t % per_epoch) as usize;
            for chunk in order.chunks(bs).skip(skip) {
                if self.cfg.max_steps.is_some_and(|m| self.adam.t >= m) {
                    stop = StopReason::MaxSteps;
                    break 'outer;
                }
                let batch: Vec<SampleRecord> = chunk.iter().map(|&i| train[i].clone()).collect();
                let r = self.train_step(&batch)?;
                let mut rec = LogRecord {
                    step: self.adam.t,
                    epoch,
                    train_cls: r.cls_term,
                    train_reg: r.reg_term,
                    train_total: r.total,
                    val_cls: None,
                    val_reg: None,
                    val_total: None,
                    lr: self.cfg.learning_rate,
                    timestamp: unix_time(),
                };
                let mut early = false;
                if self.adam.t % self.cfg.eval_interval == 0 {
                    let (v, _) = self.evaluate(val, epoch, out_dir)?;
                    rec.val_cls = Some(v.cls_term);
                    rec.val_reg = Some(v.reg_term);
                    rec.val_total = Some(v.total);
                    last_eval_step = Some(self.adam.t);
                    log::info!(
                        "step {} epoch {epoch}: train {:.5} val {:.5} (cls {:.5}, reg {:.5})",
                        self.adam.t,
                        r.total,
                        v.total,
                        v.cls_term,
                        v.reg_term
                    );
                    early = self.stale_evals >= self.cfg.early_stop_patience;
                }
                // the newest record may still gain validation losses
                if let Some(prev) = log.last() {
                    write_log(&mut log_file, prev)?;
                }
                log.push(rec);
                if early {
                    stop = StopReason::EarlyStopping;
                    break 'outer;
                }
                if self
                    .cfg
                    .time_budget_secs
                    .is_some_and(|t| started.elapsed().as_secs_f64() >= t)
                {
                    stop = StopReason::TimeBudget;
                    break 'outer;
                }
            }
            epoch += 1;
        }
        if last_eval_step != Some(self.adam.t) && (self.adam.t > 0 || self.best_model.is_none()) {
            let (v, _) = self.evaluate(val, epoch, out_dir)?;
            if let Some(last) = log.last_mut().filter(|r| r.step == self.adam.t) {
                last.val_cls = Some(v.cls_term);
                last.val_reg = Some(v.reg_term);
                last.val_total = Some(v.total);
            }
        }
        if let Some(last) = log.last() {
            write_log(&mut log_file, last)?;
        }
        if let Some((path, mut w)) = log_file {
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        if let Some(dir) = out_dir {
            save_checkpoint(
                &dir.join(LAST_CHECKPOINT),
                &self.model,
                self.adam.t,
                Some(&self.adam.moments),
                &self.extra(epoch),
            )?;
        }
        let steps = self.adam.t;
        let model = self.best_model.unwrap_or(self.model);
        Ok(TrainOutcome {
            model,
            best_val_loss: self.best_val,
            best_step: self.best_step,
            steps,
            log,
            stop_reason: stop,
        })
    }
}

fn unix_time() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn write_log(file: &mut Option<(PathBuf, std::io::BufWriter<std::fs::File>)>, rec: &LogRecord) -> Result<()> {
    if let Some((path, w)) = file {
        let line = serde_json::to_string(rec).expect("log record serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(&*path, e))?;
    }
    Ok(())
}

/// Multi-task loss of `model` pooled over every cell of `records` (no
/// augmentation), restricted to `cfg.grids`.
pub fn validation_loss(model: &Model, records: &[SampleRecord], cfg: &TrainConfig) -> Result<LossReport> {
    if records.is_empty() {
        return Err(Error::Empty("validation set".into()));
    }
    let mc = model.config();
    let spec = GridSpec::new(mc.input_size, mc.cell_size())?;
    let mask: Option<Vec<bool>> =
        (cfg.grids != GridSet::ALL).then(|| eligibility_mask(&spec, cfg.grids).iter().copied().collect());
    let mut outputs = Vec::with_capacity(records.len());
    let mut targets = Vec::with_capacity(records.len());
    for rec in records {
        let (out, _) = model.forward_sample(rec.image.view(), false)?;
        outputs.push(out);
        targets.push(encode_targets(&rec.segments, &spec, cfg.min_piece_len));
    }
    let pooled = Pooled::new(&outputs, &targets, mask.as_deref());
    Ok(multitask_loss_from_logits(pooled.batch(), &cfg.loss)?.0)
}

/// Reads a JSON-lines training log.
pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// Trains a fresh model (or resumes from `resume`) on the two manifests.
pub fn train(
    train_manifest: &Path,
    val_manifest: &Path,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    let trainer = match resume {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            if ck.model.config() != model_cfg {
                return Err(Error::Config(format!(
                    "checkpoint {} was trained with a different model configuration",
                    p.display()
                )));
            }
            Trainer::from_checkpoint(ck, cfg.clone())?
        }
        None => Trainer::new(Model::init(model_cfg.clone(), cfg.seed)?, cfg.clone())?,
    };
    let size = model_cfg.input_size;
    let train_set = load_records(&Dataset::open(train_manifest)?, size)?;
    let val_set = load_records(&Dataset::open(val_manifest)?, size)?;
    if train_set.is_empty() {
        return Err(Error::Empty(format!("{} has no records", train_manifest.display())));
    }
    if val_set.is_empty() {
        return Err(Error::Empty(format!("{} has no records", val_manifest.display())));
    }
    trainer.run(&train_set, &val_set, out_dir)
}
