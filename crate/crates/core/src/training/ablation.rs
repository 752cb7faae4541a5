use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::{EvalConfig, TrainConfig};
use super::evaluate::evaluate_records;
use super::trainer::Trainer;
use crate::error::{Error, Result};
use crate::gridcodec::GridSet;
use crate::loss::{ClassificationLoss, RegressionLoss};
use crate::metrics::EvalResult;
use crate::model::{DownsamplingMode, Model, ModelConfig};
use crate::synthdata::SampleRecord;

/// The four design choices the ablation matrix varies one at a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    Downsampling,
    Grids,
    RegLoss,
    ClsLoss,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 4] = [Self::Downsampling, Self::Grids, Self::RegLoss, Self::ClsLoss];

    pub fn name(self) -> &'static str {
        match self {
            Self::Downsampling => "downsampling",
            Self::Grids => "grids",
            Self::RegLoss => "regloss",
            Self::ClsLoss => "clsloss",
        }
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation axis \"{s}\" (downsampling, grids, regloss, clsloss)")))
    }
}

impl std::fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One row of an ablation table.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

/// Grid subsets in table order, by number of grids.
pub const GRID_VARIANTS: [&str; 8] = ["M", "MH", "MV", "MC", "MHC", "MVC", "MVH", "MHVC"];

/// Variants of `axis` derived from the base configuration, in table order.
pub fn ablation_variants(axis: AblationAxis, model: &ModelConfig, train: &TrainConfig, eval: &EvalConfig) -> Vec<Variant> {
    let v = |name: String, model: ModelConfig, train: TrainConfig, eval: EvalConfig| Variant {
        name,
        model,
        train,
        eval,
    };
    match axis {
        AblationAxis::Downsampling => [("LS-Net-P", DownsamplingMode::MaxPool), ("LS-Net-S", DownsamplingMode::StridedConv)]
            .into_iter()
            .map(|(n, mode)| {
                let m = ModelConfig {
                    downsampling_mode: mode,
                    ..model.clone()
                };
                v(n.into(), m, train.clone(), eval.clone())
            })
            .collect(),
        AblationAxis::Grids => GRID_VARIANTS
            .iter()
            .map(|code| {
                let grids = GridSet::parse(code).expect("valid grid code");
                let t = TrainConfig {
                    grids,
                    ..train.clone()
                };
                let e = EvalConfig { grids, ..eval.clone() };
                v(format!("LS-Net-{}-{code}", code.len()), model.clone(), t, e)
            })
            .collect(),
        AblationAxis::RegLoss => [
            ("LS-Net-2 (L2)", RegressionLoss::L2),
            ("LS-Net-1 (L1)", RegressionLoss::L1),
            ("LS-Net-S (Smooth L1)", RegressionLoss::SmoothL1),
            ("LS-Net-W (Wing loss)", RegressionLoss::Wing),
        ]
        .into_iter()
        .map(|(n, r)| {
            let mut t = train.clone();
            t.loss.reg_variant = r;
            v(n.into(), model.clone(), t, eval.clone())
        })
        .collect(),
        AblationAxis::ClsLoss => [
            ("LS-Net-CE (Cross Entropy loss)", ClassificationLoss::CrossEntropy),
            ("LS-Net-FL (Focal Loss)", ClassificationLoss::Focal),
        ]
        .into_iter()
        .map(|(n, c)| {
            let mut t = train.clone();
            t.loss.cls_variant = c;
            v(n.into(), model.clone(), t, eval.clone())
        })
        .collect(),
    }
}

/// Trains and evaluates every variant on the same data. Model initialization
/// and data order follow each variant's `train.seed`.
///
/// `train` and `val` must be at the model input size; `test` records are
/// evaluated at their own size. With `out_dir`, each variant's artifacts go
/// to a numbered subdirectory.
pub fn run_ablation_matrix(
    variants: &[Variant],
    train: &[SampleRecord],
    val: &[SampleRecord],
    test: &[SampleRecord],
    out_dir: Option<&Path>,
) -> Result<Vec<(String, EvalResult)>> {
    let mut rows = Vec::with_capacity(variants.len());
    for (i, v) in variants.iter().enumerate() {
        log::info!("ablation variant {}/{}: {}", i + 1, variants.len(), v.name);
        let model = Model::init(v.model.clone(), v.train.seed)?;
        let dir = out_dir.map(|d| d.join(format!("{i:02}")));
        let outcome = Trainer::new(model, v.train.clone())?.run(train, val, dir.as_deref())?;
        rows.push((v.name.clone(), evaluate_records(&outcome.model, test, &v.eval)?));
    }
    Ok(rows)
}

/// Mean and sample standard deviation of a variant's scores across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub name: String,
    pub seeds: Vec<u64>,
    pub apr: (f64, f64),
    pub arr: (f64, f64),
    pub f1: (f64, f64),
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Runs the matrix once per seed (model init and data order) and summarizes
/// each variant. Rows keep the variant order.
pub fn run_ablation_seeds(
    variants: &[Variant],
    seeds: &[u64],
    train: &[SampleRecord],
    val: &[SampleRecord],
    test: &[SampleRecord],
    out_dir: Option<&Path>,
) -> Result<Vec<SeedSummary>> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let mut runs: Vec<Vec<EvalResult>> = vec![Vec::new(); variants.len()];
    for &seed in seeds {
        let seeded: Vec<Variant> = variants
            .iter()
            .map(|v| {
                let mut v = v.clone();
                v.train.seed = seed;
                v
            })
            .collect();
        let dir = out_dir.map(|d| d.join(format!("seed{seed}")));
        for (i, (_, r)) in run_ablation_matrix(&seeded, train, val, test, dir.as_deref())?.into_iter().enumerate() {
            runs[i].push(r);
        }
    }
    Ok(variants
        .iter()
        .zip(runs)
        .map(|(v, rs)| {
            let pick = |f: fn(&EvalResult) -> f64| mean_std(&rs.iter().map(f).collect::<Vec<_>>());
            SeedSummary {
                name: v.name.clone(),
                seeds: seeds.to_vec(),
                apr: pick(|r| r.apr),
                arr: pick(|r| r.arr),
                f1: pick(|r| r.f1),
            }
        })
        .collect())
}

/// Text table of seed summaries, `mean ± std` per metric.
pub fn format_summary_table(rows: &[SeedSummary]) -> String {
    use std::fmt::Write;
    let name_w = rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max("Method".len());
    let rule = format!("+{}+{}+{}+{}+\n", "-".repeat(name_w + 2), "-".repeat(19), "-".repeat(19), "-".repeat(19));
    let mut s = rule.clone();
    let _ = writeln!(s, "| {:<name_w$} | {:<17} | {:<17} | {:<17} |", "Method", "APR", "ARR", "F1 Score");
    s.push_str(&rule);
    for r in rows {
        let cell = |(m, d): (f64, f64)| format!("{m:.4} ± {d:.4}");
        let _ = writeln!(
            s,
            "| {:<name_w$} | {:<17} | {:<17} | {:<17} |",
            r.name,
            cell(r.apr),
            cell(r.arr),
            cell(r.f1)
        );
    }
    s.push_str(&rule);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_sets() {
        let (m, t, e) = (ModelConfig::desk(), TrainConfig::desk(), EvalConfig::default());
        let names = |a| -> Vec<String> { ablation_variants(a, &m, &t, &e).into_iter().map(|v| v.name).collect() };
        assert_eq!(
            names(AblationAxis::Grids),
            [
                "LS-Net-1-M",
                "LS-Net-2-MH",
                "LS-Net-2-MV",
                "LS-Net-2-MC",
                "LS-Net-3-MHC",
                "LS-Net-3-MVC",
                "LS-Net-3-MVH",
                "LS-Net-4-MHVC"
            ]
        );
        assert_eq!(names(AblationAxis::RegLoss).len(), 4);
        assert_eq!(names(AblationAxis::ClsLoss).len(), 2);
        assert_eq!(names(AblationAxis::Downsampling), ["LS-Net-P", "LS-Net-S"]);
        let g = ablation_variants(AblationAxis::Grids, &m, &t, &e);
        assert!(g.iter().all(|v| v.train.grids == v.eval.grids));
        assert_eq!(g[7].train.grids, GridSet::ALL);
        assert_eq!("regloss".parse::<AblationAxis>().unwrap(), AblationAxis::RegLoss);
        assert!("loss".parse::<AblationAxis>().is_err());
    }

    #[test]
    fn mean_and_sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
    }
}
