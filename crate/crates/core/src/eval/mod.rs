//! Ranking metrics, the evaluation protocol, experiment configs, ablation
//! grids and CSV exports.

mod config;
mod experiment;
mod export;
mod metrics;
mod ranking;

pub use config::{load_grid, parse_grid, DataSource, ExperimentConfig, KEYS};
pub use experiment::{
    checkpoint_context, evaluate_checkpoint, run_ablation, run_ablation_with, run_experiment, train_to_dir,
    CellResult, MetricsRow, PreparedData, RunOutcome, TrainArtifacts, METRICS_HEADER,
};
pub use export::{export_attention, export_embeddings};
pub use metrics::{mrr, recall_at_k, summarize, Averaging, RankedInteraction};
pub use ranking::{evaluate, EvalReport, Evaluator, MaskSeen, MetricSummary, Split};
