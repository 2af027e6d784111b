//! End-to-end training and testing pipelines, evaluation metrics, run
//! directories and reports.

mod config;
mod metrics;
mod pipeline;
mod report;
mod run;

pub use config::{attack_label, default_attacks, DataConfig, EvalConfig, RunConfig, Seeds};
pub use metrics::{recall_at_fpr, roc_auc, RecallAtFpr, RocPoint};
pub use pipeline::{
    ablation_node_only, build_attacks, build_world, clean_fpr, detect_all, flag_regions, generate_corpora,
    pipeline_detect, pipeline_train, pipeline_train_on, scene_profiles, train_context_model, train_detector, Artifacts,
    Corpora, Detector, Evaluation,
};
pub use report::{
    read_records_csv, render_summary, stratified_report, write_records_csv, write_roc_csv, Bucket, DetectionReport,
    ObjectDetection, RecordRow, RegionRecord, StratTable, IOU_BUCKETS, PROPOSAL_BUCKETS,
};
pub use run::{Manifest, Results, RunDir, Stage, VERSION};

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{stage}: {message}")]
    Stage { stage: String, message: String },
    #[error("metric: {0}")]
    Metric(String),
    #[error("{0}")]
    Io(String),
}

impl HarnessError {
    pub fn stage(stage: &str, err: impl std::fmt::Display) -> HarnessError {
        HarnessError::Stage {
            stage: stage.to_string(),
            message: err.to_string(),
        }
    }

    pub(crate) fn io(path: &Path, err: impl std::fmt::Display) -> HarnessError {
        HarnessError::Io(format!("{}: {err}", path.display()))
    }

    /// Process exit code: 2 for configuration errors, 3 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 3,
        }
    }
}
