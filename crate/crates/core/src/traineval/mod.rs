//! Training loop, evaluation and result reporting.

pub mod eval;
pub mod metrics;
pub mod report;
pub mod train;

pub use eval::{evaluate, evaluate_checkpoint, predict_logits, EvalOptions, EvalReport, SMOOTHING_WINDOW};
pub use metrics::{aggregate_mean_std, format_mean_std, format_percent, moving_average, topk_accuracy};
pub use report::{group_series, render_svg, render_table, summarize, GroupKey, GroupSummary};
pub use train::{
    batch_for_step, cache_path, checkpoint_name, crop_batch, extract_cache, latest_checkpoint, load_examples,
    load_state, read_log, train, write_log_header, Example, StepLog, TrainConfig, TrainState,
};
