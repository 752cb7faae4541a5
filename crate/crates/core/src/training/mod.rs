//! Optimization, evaluation and the ablation matrix.

mod ablation;
mod adam;
mod config;
mod evaluate;
mod fps;
mod trainer;

pub use ablation::{
    ablation_variants, format_summary_table, run_ablation_matrix, run_ablation_seeds, AblationAxis, SeedSummary, Variant, GRID_VARIANTS,
};
pub use adam::{Adam, ADAM_EPSILON};
pub use config::{EvalConfig, TrainConfig};
pub use evaluate::{
    detect_segments, evaluate_checkpoint, evaluate_ground_truth, evaluate_model, evaluate_predictions,
    evaluate_records, ground_truth_map, load_eval_records, prediction_map, EvalReport, EVAL_REPORT_VERSION,
};
pub use fps::{measure_fps, WARMUP_ITERATIONS};
pub use trainer::{
    load_records, read_log, train, validation_loss, LogRecord, StopReason, TrainOutcome, Trainer, BEST_CHECKPOINT,
    LAST_CHECKPOINT, TRAIN_LOG,
};
