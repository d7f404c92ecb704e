//! Optimizer, learning-rate schedule, synthetic corpora and the comparative
//! experiment runner.

mod data;
mod experiment;
mod optim;

pub use data::{make_corrupted_dataset, BlobTask, CorruptionSpec, Dataset, MarkovTask, Shift};
pub use experiment::{
    batch_objective, build_corpora, build_pair, evaluate_network, fine_tune, mean_cross_entropy, prepare_seed, run_experiment,
    run_experiment_with_models, run_seed, thread_pool, CellSummary, Corpora, DataConfig, EvalMetrics, ExperimentConfig,
    FineTuneStats, MeanStd, Method, MetricsReport, ModelConfig, PairedGap, PathsConfig, PretrainConfig, SeedOutcome,
    SeedPlan, SeedRecord, SeedSetup, StepLoss,
};
pub use optim::{adamw_step, lr_at, AdamW, OptimConfig, Schedule};
