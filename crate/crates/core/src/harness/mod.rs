//! Experiment plumbing: configuration files, seeded multi-run training,
//! evaluation, metrics CSVs, the NQMIX / NQMIX-M / QMIX ablation and plots.

pub mod config;
pub mod eval;
pub mod experiment;
pub mod metrics;
pub mod plot;

pub use config::RunConfig;
pub use eval::{
    eval_rng, evaluate, evaluate_networks, success_threshold, Evaluation, SuccessThreshold,
    CONTINUOUS_SUCCESS_FRACTION, DISCRETE_SUCCESS_TOL,
};
pub use experiment::{
    checkpoint_path, metrics_path, monotonicity_probe, run_ablation, run_experiment, AblationOutput,
    ExperimentOutput, ProbeReport, RunManifest, RunStatus, SeedRecord, ABLATION_ALGOS,
};
pub use metrics::{
    aggregate, read_metrics, read_rows, write_metrics, AblationRow, AggregateRow, MetricsRow, METRICS_HEADER,
};
pub use plot::{emit_plot, read_series, render_svg, Series};
