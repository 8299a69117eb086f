//! Experiment orchestration: training, evaluation, sweeps, fine-tuning and
//! reporting.

pub mod config;
pub mod evaluate;
pub mod finetune;
pub mod par;
pub mod report;
pub mod sweep;
pub mod train;

pub use config::{ExperimentConfig, FinetuneConfig, SweepConfig, TraceSpec, TrafficSpec};
pub use evaluate::{evaluate, evaluate_episodes, EpisodeSummary, EvalSpec, MetricsRecord};
pub use finetune::{finetune, FinetuneOutcome};
pub use par::{par_map, Execution};
pub use report::{emit_report, reemit, Summary};
pub use sweep::{sweep_conditions, sweep_noise, SweepResult};
pub use train::{pred_alloc_checkpoint, train, train_with_model, EpochRecord, TrainOutcome};
