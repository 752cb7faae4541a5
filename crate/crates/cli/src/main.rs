//! `lsnet {generate|train|eval|detect|ablate}`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numeric
//! failure (training divergence).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lsnet::config::RunConfigFile;
use lsnet::Error;

mod commands;

#[derive(Parser, Debug)]
#[command(name = "lsnet", version, about = "Single-shot line-segment detector")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// Run configuration file (JSON). Without it the chosen preset is used.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Preset used when no config file is given.
    #[arg(long, global = true, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    /// Override one config value, e.g. `--set train.learning_rate=0.0005`.
    /// The value is parsed as JSON, falling back to a plain string.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Upper bound on data-parallel workers. Processing is single-worker,
    /// which is also the only mode with reproducibility guarantees.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Input 256, channel plan [16, 32, 64, 128].
    Desk,
    /// Input 512, channel plan [64, 128, 256, 512].
    Full,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render synthetic annotated scenes and a manifest.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "n", default_value_t = 200)]
        n_images: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Image side in pixels (defaults to the model input size).
        #[arg(long)]
        size: Option<usize>,
    },
    /// Train on `<data>/train/manifest.jsonl`, validating on `<data>/val/`.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written by a previous run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on a manifest.
    Eval {
        #[arg(long, required_unless_present = "gt_as_prediction")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        /// Raster line width W_l.
        #[arg(long)]
        wl: Option<usize>,
        /// `otsu` or `fixed:<t>`.
        #[arg(long)]
        binarize: Option<String>,
        /// Smoothing sigma (0 disables smoothing).
        #[arg(long)]
        sigma_s: Option<f64>,
        /// Feed the ground truth through the pipeline as predictions.
        #[arg(long)]
        gt_as_prediction: bool,
        /// Directory for `eval_report.json` and `eval_report.txt`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Detect segments in one image.
    Detect {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Write the input with detections drawn in red.
        #[arg(long)]
        overlay: Option<PathBuf>,
        /// Write detections as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Train and evaluate the variants of one or more ablation axes on
    /// `<data>/{train,val,test}`.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated: downsampling, grids, regloss, clsloss.
        #[arg(long, value_delimiter = ',', required = true)]
        axes: Vec<String>,
        /// Number of seeds per variant (starting at the configured seed).
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Shape(_) | Error::Index(_) | Error::Empty(_) => 2,
        Error::Io { .. } | Error::Image { .. } | Error::Format(_) => 3,
        Error::Diverged { .. } => 4,
    }
}

/// Loads the config (file or preset), applies `--set` overrides, validates.
pub fn resolve_config(common: &CommonArgs) -> lsnet::Result<RunConfigFile> {
    let base = match &common.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
            serde_json::from_str::<serde_json::Value>(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => {
            let preset = match common.preset {
                Preset::Desk => RunConfigFile::desk(),
                Preset::Full => RunConfigFile::default(),
            };
            serde_json::to_value(&preset).expect("config serializes")
        }
    };
    let mut doc = base;
    for o in &common.overrides {
        apply_override(&mut doc, o)?;
    }
    if common.workers == 0 {
        return Err(Error::Config("--workers must be at least 1".into()));
    }
    RunConfigFile::from_json(&doc.to_string())
}

fn apply_override(doc: &mut serde_json::Value, spec: &str) -> lsnet::Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override \"{spec}\" is not of the form section.key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut node = doc;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, k) in keys.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override \"{path}\": \"{k}\" is not inside an object")))?;
        if i + 1 == keys.len() {
            obj.insert(k.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(k.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    Err(Error::Config("empty override path".into()))
}

fn run(cli: Cli) -> lsnet::Result<()> {
    let cfg = resolve_config(&cli.common)?;
    match cli.command {
        Command::Generate {
            out,
            n_images,
            seed,
            size,
        } => commands::generate(&cfg, &out, n_images, seed, size),
        Command::Train { data, out, resume } => commands::train(&cfg, &data, &out, resume.as_deref()),
        Command::Eval {
            checkpoint,
            manifest,
            wl,
            binarize,
            sigma_s,
            gt_as_prediction,
            out,
        } => {
            let mut eval = cfg.eval.clone();
            if let Some(w) = wl {
                eval.line_width = w;
            }
            if let Some(b) = binarize {
                eval.binarization = b.parse()?;
            }
            if let Some(s) = sigma_s {
                eval.sigma_s = s;
            }
            eval.validate()?;
            let ck = if gt_as_prediction { None } else { checkpoint.as_deref() };
            commands::eval(&eval, ck, &manifest, out.as_deref())
        }
        Command::Detect {
            checkpoint,
            image,
            overlay,
            json,
        } => commands::detect(&cfg, &checkpoint, &image, overlay.as_deref(), json.as_deref()),
        Command::Ablate { data, out, axes, seeds } => commands::ablate(&cfg, &data, &out, &axes, seeds),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub(crate) fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}
