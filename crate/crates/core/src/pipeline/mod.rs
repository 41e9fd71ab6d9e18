//! Scenario generation, training and the staged streaming run.

pub mod artifacts;
pub mod config;
pub mod log;
pub mod models;
pub mod queue;
pub mod report;
pub mod run;
pub mod scenario;
pub mod stages;
pub mod train;

pub use artifacts::{artifact_dir_name, persist_anomaly_artifact, ArtifactPaths};
pub use config::{RunConfig, SlowStage, StageName};
pub use log::{emit_event_log, read_event_log, EventKind, EventRecord};
pub use models::ModelBundle;
pub use queue::{QueueStats, StageQueue};
pub use report::{roc_auc, LogReport};
pub use run::{pipeline_run, RunInputs, RunSummary};
pub use scenario::{generate_scenario, read_scenario, GeneratedScenario, Scenario};
pub use train::{train_models, TrainSummary};
