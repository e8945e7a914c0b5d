//! Evaluation, config files and hyperparameter sweeps.

mod config;
mod eval;
mod gradsuite;
mod sweep;

pub use config::{parse_literal, DataConfig, ExperimentConfig};
pub use gradsuite::{loss_gradient_check, model_check, run_grad_suite, NamedReport, Suite};
pub use eval::{evaluate, predict_records, rank_correlation, EvalConfig};
pub use sweep::{
    load_results, preset, read_results, render_table, run_sweep, write_results, ResultRow, SweepOutcome,
    SweepSpec, SweepValue, PRESETS, RESULTS_HEADER,
};
