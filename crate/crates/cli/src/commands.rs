use std::path::Path;

use lsnet::config::RunConfigFile;
use lsnet::metrics::format_table;
use lsnet::model::load_checkpoint;
use lsnet::postprocess::rasterize_segments;
use lsnet::synthdata::{generate_dataset, load_rgb_png, save_rgb_png, Dataset};
use lsnet::training::{
    ablation_variants, detect_segments, evaluate_checkpoint, evaluate_ground_truth, format_summary_table,
    load_eval_records, load_records, run_ablation_seeds, AblationAxis, EvalConfig, EvalReport,
};
use lsnet::{Error, Result};
use serde::Serialize;

use crate::io_err;

pub const CONFIG_SNAPSHOT: &str = "config.json";
pub const EVAL_REPORT_JSON: &str = "eval_report.json";
pub const EVAL_REPORT_TEXT: &str = "eval_report.txt";

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn generate(cfg: &RunConfigFile, out: &Path, n: usize, seed: u64, size: Option<usize>) -> Result<()> {
    let size = size.unwrap_or(cfg.model.input_size);
    if size == 0 {
        return Err(Error::Config("--size must be positive".into()));
    }
    let created_dir = !out.exists();
    let images = out.join("images");
    let created_images = !images.exists();
    let manifest = out.join("manifest.jsonl");
    let created_manifest = !manifest.exists();
    match generate_dataset(&cfg.scene, size, n, seed, out) {
        Ok(ds) => {
            println!("wrote {} images and {}", ds.len(), manifest.display());
            Ok(())
        }
        Err(e) => {
            // best-effort cleanup of what this run created
            if created_dir {
                let _ = std::fs::remove_dir_all(out);
            } else {
                if created_images {
                    let _ = std::fs::remove_dir_all(&images);
                }
                if created_manifest {
                    let _ = std::fs::remove_file(&manifest);
                }
            }
            Err(e)
        }
    }
}

pub fn train(cfg: &RunConfigFile, data: &Path, out: &Path, resume: Option<&Path>) -> Result<()> {
    let train_manifest = data.join("train").join("manifest.jsonl");
    let val_manifest = data.join("val").join("manifest.jsonl");
    for m in [&train_manifest, &val_manifest] {
        if !m.is_file() {
            return Err(io_err(m, std::io::Error::new(std::io::ErrorKind::NotFound, "manifest not found")));
        }
    }
    create_dir(out)?;
    cfg.save(&out.join(CONFIG_SNAPSHOT))?;
    let outcome = lsnet::training::train(
        &train_manifest,
        &val_manifest,
        &cfg.model,
        &cfg.train_config(),
        Some(out),
        resume,
    )?;
    println!(
        "{} steps ({:?}); best validation loss {:.6} at step {}",
        outcome.steps, outcome.stop_reason, outcome.best_val_loss, outcome.best_step
    );
    Ok(())
}

pub fn eval(eval: &EvalConfig, checkpoint: Option<&Path>, manifest: &Path, out: Option<&Path>) -> Result<()> {
    let (name, result) = match checkpoint {
        Some(ck) => (ck.display().to_string(), evaluate_checkpoint(ck, manifest, eval)?),
        None => ("ground truth".to_string(), evaluate_ground_truth(manifest, eval)?),
    };
    let report = EvalReport::new(
        checkpoint.map(|p| p.display().to_string()),
        manifest.display().to_string(),
        eval.clone(),
        result.clone(),
    );
    let text = format!(
        "W_l = {}, binarization = {}, sigma_s = {}\n{}harmonic F1 of APR/ARR: {:.4} over {} images\n",
        eval.line_width,
        eval.binarization,
        eval.sigma_s,
        format_table(&[(name, result)]),
        report.harmonic_f1,
        report.result.n_images
    );
    print!("{text}");
    if let Some(dir) = out {
        create_dir(dir)?;
        write(&dir.join(EVAL_REPORT_JSON), &(report.to_json() + "\n"))?;
        write(&dir.join(EVAL_REPORT_TEXT), &text)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct DetectedSegment {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
    confidence: f64,
}

#[derive(Serialize)]
struct Detections {
    image: String,
    width: usize,
    height: usize,
    threshold: f64,
    segments: Vec<DetectedSegment>,
}

pub fn detect(
    cfg: &RunConfigFile,
    checkpoint: &Path,
    image: &Path,
    overlay: Option<&Path>,
    json: Option<&Path>,
) -> Result<()> {
    let model = load_checkpoint(checkpoint)?.model;
    let img = load_rgb_png(image)?;
    let (h, w, _) = img.dim();
    let segs = detect_segments(&model, &img, cfg.eval.decode_threshold, cfg.eval.grids)?;
    if let Some(path) = overlay {
        let mask = rasterize_segments(&segs, cfg.eval.line_width, w, h);
        let mut drawn = img.clone();
        for ((y, x), &v) in mask.values.indexed_iter() {
            if v > 0.0 {
                drawn[[y, x, 0]] = 1.0;
                drawn[[y, x, 1]] = 0.0;
                drawn[[y, x, 2]] = 0.0;
            }
        }
        save_rgb_png(path, &drawn)?;
    }
    if let Some(path) = json {
        let det = Detections {
            image: image.display().to_string(),
            width: w,
            height: h,
            threshold: cfg.eval.decode_threshold,
            segments: segs
                .iter()
                .map(|s| DetectedSegment {
                    x1: s.x1,
                    y1: s.y1,
                    x2: s.x2,
                    y2: s.y2,
                    confidence: s.confidence.unwrap_or(1.0),
                })
                .collect(),
        };
        write(path, &(serde_json::to_string_pretty(&det).expect("detections serialize") + "\n"))?;
    }
    println!("{} segments detected in {}", segs.len(), image.display());
    Ok(())
}

pub fn ablate(cfg: &RunConfigFile, data: &Path, out: &Path, axes: &[String], seeds: u64) -> Result<()> {
    let axes: Vec<AblationAxis> = axes.iter().map(|a| a.trim().parse()).collect::<Result<_>>()?;
    if seeds == 0 {
        return Err(Error::Config("--seeds must be at least 1".into()));
    }
    let size = cfg.model.input_size;
    let train = load_records(&Dataset::open(&data.join("train").join("manifest.jsonl"))?, size)?;
    let val = load_records(&Dataset::open(&data.join("val").join("manifest.jsonl"))?, size)?;
    let test = load_eval_records(&data.join("test").join("manifest.jsonl"))?;
    create_dir(out)?;
    cfg.save(&out.join(CONFIG_SNAPSHOT))?;
    let tc = cfg.train_config();
    let seed_list: Vec<u64> = (0..seeds).map(|i| tc.seed + i).collect();
    for axis in axes {
        let variants = ablation_variants(axis, &cfg.model, &tc, &cfg.eval);
        let dir = out.join(axis.name());
        let rows = run_ablation_seeds(&variants, &seed_list, &train, &val, &test, Some(&dir))?;
        let table = format_summary_table(&rows);
        println!("{axis} ({} seed(s))\n{table}", seed_list.len());
        write(&out.join(format!("ablation_{}.txt", axis.name())), &table)?;
        write(
            &out.join(format!("ablation_{}.json", axis.name())),
            &(serde_json::to_string_pretty(&rows).expect("summaries serialize") + "\n"),
        )?;
    }
    Ok(())
}
