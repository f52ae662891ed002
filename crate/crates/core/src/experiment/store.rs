//! Content-addressed results store.
//!
//! ```text
//! <root>/runs/<run-hash>/         one trained network: run.json, split.json,
//!                                 metrics.csv, checkpoint.bin, result.json,
//!                                 confusion.csv, done
//! <root>/experiments/<id>/        config.toml, record.json, tables/
//! ```
//!
//! A run directory is assembled under a temporary name and renamed into
//! place once complete, so readers never observe a partial run and
//! concurrent writers of the same run cannot interleave.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::hash_json;
use crate::analytics::{ConfusionMatrix, ErrorFraction};
use crate::augment::ColorStats;
use crate::data::{DataSource, DatasetSplit, SourceConfig};
use crate::error::{Error, IoContext, Result};
use crate::labeling::LabelScheme;
use crate::model::ArchitectureSpec;
use crate::training::{train, TrainConfig, TrainHooks};

pub const HARNESS_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Inputs that fully determine one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub source: SourceConfig,
    pub model: ArchitectureSpec,
    pub train: TrainConfig,
    pub scheme: LabelScheme,
    pub seed: u64,
    pub split_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color_stats_hash: Option<String>,
    pub harness_version: String,
}

impl RunSpec {
    pub fn hash(&self) -> Result<String> {
        hash_json(self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub class_ids: Vec<String>,
    pub category_of: Option<Vec<usize>>,
    pub category_names: Option<Vec<String>>,
    pub scheme: LabelScheme,
    pub confusion: ConfusionMatrix,
    pub final_train_loss: f64,
}

impl RunResult {
    pub fn error(&self) -> ErrorFraction {
        self.confusion.error()
    }

    pub fn per_class(&self) -> Vec<(String, ErrorFraction)> {
        self.class_ids
            .iter()
            .cloned()
            .zip(self.confusion.per_class_errors())
            .collect()
    }
}

pub struct RunOutcome {
    pub hash: String,
    pub result: RunResult,
    /// False when the run was already complete in the store.
    pub executed: bool,
}

#[derive(Clone, Debug)]
pub struct ResultsStore {
    root: PathBuf,
}

impl ResultsStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for sub in ["runs", "experiments"] {
            let dir = root.join(sub);
            std::fs::create_dir_all(&dir).at(&dir)?;
        }
        Ok(ResultsStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, hash: &str) -> PathBuf {
        self.root.join("runs").join(hash)
    }

    pub fn experiment_dir(&self, id: &str) -> PathBuf {
        self.root.join("experiments").join(id)
    }

    pub fn is_complete(&self, hash: &str) -> bool {
        self.run_dir(hash).join("done").is_file()
    }

    pub fn load_result(&self, hash: &str) -> Result<Option<RunResult>> {
        if !self.is_complete(hash) {
            return Ok(None);
        }
        let path = self.run_dir(hash).join("result.json");
        let text = std::fs::read_to_string(&path).at(&path)?;
        Ok(Some(serde_json::from_str(&text)?))
    }

    /// Trains the run unless the store already holds it.
    pub fn execute(
        &self,
        spec: &RunSpec,
        split: &DatasetSplit,
        source: &DataSource,
        color_stats: Option<&ColorStats>,
    ) -> Result<RunOutcome> {
        let hash = spec.hash()?;
        if let Some(result) = self.load_result(&hash)? {
            log::info!("run {} already complete", &hash[..12]);
            return Ok(RunOutcome {
                hash,
                result,
                executed: false,
            });
        }
        let tmp = self.root.join("runs").join(format!(
            ".tmp-{}-{}",
            hash,
            std::process::id()
        ));
        if tmp.exists() {
            std::fs::remove_dir_all(&tmp).at(&tmp)?;
        }
        std::fs::create_dir_all(&tmp).at(&tmp)?;
        write_json(&tmp.join("run.json"), spec)?;
        write_json(&tmp.join("split.json"), split)?;

        let hooks = TrainHooks {
            color_stats,
            checkpoint: Some(tmp.join("checkpoint.bin")),
            metrics: Some(tmp.join("metrics.csv")),
        };
        let outcome = match train::<f32>(split, &spec.scheme, &spec.model, &spec.train, source, spec.seed, &hooks) {
            Ok(o) => o,
            Err(e) => {
                let failed = self.root.join("runs").join(format!("{hash}.failed"));
                let _ = std::fs::remove_dir_all(&failed);
                let _ = std::fs::rename(&tmp, &failed);
                std::fs::write(failed.join("error.txt"), e.to_string()).at(&failed)?;
                return Err(e);
            }
        };
        let result = RunResult {
            class_ids: split.class_ids.clone(),
            category_of: split.category_of.clone(),
            category_names: split.category_names.clone(),
            scheme: spec.scheme,
            confusion: outcome.test.confusion,
            final_train_loss: outcome.metrics.last().map_or(f64::NAN, |m| m.train_loss),
        };
        write_json(&tmp.join("result.json"), &result)?;
        let csv = result.confusion.to_csv(&result.class_ids);
        std::fs::write(tmp.join("confusion.csv"), csv).at(&tmp)?;
        std::fs::write(tmp.join("done"), format!("{hash}\n")).at(&tmp)?;

        let dest = self.run_dir(&hash);
        if dest.exists() && !self.is_complete(&hash) {
            std::fs::remove_dir_all(&dest).at(&dest)?;
        }
        if std::fs::rename(&tmp, &dest).is_err() {
            // Another writer completed the same run first.
            std::fs::remove_dir_all(&tmp).at(&tmp)?;
            let result = self
                .load_result(&hash)?
                .ok_or_else(|| Error::Config(format!("run directory {} is incomplete", dest.display())))?;
            return Ok(RunOutcome {
                hash,
                result,
                executed: true,
            });
        }
        Ok(RunOutcome {
            hash,
            result,
            executed: true,
        })
    }
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    write_atomic(path, &text)
}

pub(crate) fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, text).at(&tmp)?;
    std::fs::rename(&tmp, path).at(path)
}
