//! Experiment orchestration: declarative configs, a resumable results store,
//! the three studies, and their tables.

mod config;
mod store;
mod studies;
mod tables;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

pub use config::{
    DataConfig, ExperimentConfig, Grouping, LabelCompareConfig, Preset, ScalingConfig, SharedConfig, BUILTIN_IMAGENET,
    SCHEMA_VERSION,
};
pub use store::{ResultsStore, RunOutcome, RunResult, RunSpec, HARNESS_VERSION};
pub use studies::{
    estimate_color_stats, experiment_id, full_split, load_record, planned_runs, run_experiment, run_label_comparison, run_scaling,
    run_shared_vs_separate, train_single, ExperimentKind, ExperimentRecord, RunEntry, RunFailure, RunRole, StudyOutcome,
};
pub use tables::{
    label_summary, render_tables, scaling_summary, shared_summary, ClassDelta, LabelSummary, ScalingSummary,
    SharedSummary,
};

/// Lowercase hex SHA-256.
pub fn hash_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of a value's JSON serialisation.
pub fn hash_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    Ok(hash_hex(&serde_json::to_vec(value)?))
}
