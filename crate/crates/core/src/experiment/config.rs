use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::augment::{AugmentConfig, ViewSpec};
use crate::data::{CategoryManifest, SourceConfig, SyntheticConfig, IMAGENET_CATEGORY_MANIFEST};
use crate::error::{Error, IoContext, Result};
use crate::labeling::LabelKind;
use crate::model::ArchitectureSpec;
use crate::training::{EvalConfig, LrSchedule, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// Manifest value naming the bundled 100-class ImageNet manifest.
pub const BUILTIN_IMAGENET: &str = "builtin:imagenet_10x10";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Paper,
    Cifar,
    Toy,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "cifar" => Ok(Preset::Cifar),
            "toy" => Ok(Preset::Toy),
            other => Err(Error::Config(format!("unknown preset `{other}` (paper, cifar, toy)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub train_per_class: usize,
    pub test_per_class: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    pub sizes: Vec<usize>,
    pub replicates: Vec<usize>,
}

impl ScalingConfig {
    pub fn total_runs(&self) -> usize {
        self.replicates.iter().sum()
    }
}

impl Default for ScalingConfig {
    fn default() -> Self {
        ScalingConfig {
            sizes: vec![10, 50, 100, 500, 1000],
            replicates: vec![10, 10, 5, 2, 1],
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Grouping {
    #[default]
    Natural,
    /// Classes dealt into as many equal random groups as there are natural
    /// categories.
    Random { seed: u64 },
}

impl Grouping {
    pub fn label(&self) -> &'static str {
        match self {
            Grouping::Natural => "natural",
            Grouping::Random { .. } => "random",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SharedConfig {
    pub grouping: Grouping,
    /// Bin width of the per-class delta histogram, in percentage points.
    pub histogram_bin_pct: f64,
}

impl Default for SharedConfig {
    fn default() -> Self {
        SharedConfig {
            grouping: Grouping::Natural,
            histogram_bin_pct: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelCompareConfig {
    /// The two arms, compared as `arms[1]` against `arms[0]`.
    pub arms: [LabelKind; 2],
}

impl Default for LabelCompareConfig {
    fn default() -> Self {
        LabelCompareConfig {
            arms: [LabelKind::ClassOnly, LabelKind::ClassCategory],
        }
    }
}

/// Everything an experiment depends on. Serialised as TOML; its hash names
/// the experiment in the results store.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    /// A manifest path, [`BUILTIN_IMAGENET`], or absent for the source's own
    /// categories.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color_stats: Option<PathBuf>,
    pub source: SourceConfig,
    pub data: DataConfig,
    pub model: ArchitectureSpec,
    pub train: TrainConfig,
    #[serde(default)]
    pub scaling: ScalingConfig,
    #[serde(default)]
    pub shared: SharedConfig,
    #[serde(default)]
    pub labels: LabelCompareConfig,
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Paper => ExperimentConfig {
                schema_version: SCHEMA_VERSION,
                seed: 1,
                manifest: Some(BUILTIN_IMAGENET.into()),
                color_stats: Some(PathBuf::from("color_stats.txt")),
                source: SourceConfig::Folder {
                    root: PathBuf::from("data/imagenet"),
                },
                data: DataConfig {
                    train_per_class: 1300,
                    test_per_class: 50,
                },
                model: ArchitectureSpec::paper(1000),
                train: TrainConfig {
                    epochs: 90,
                    batch_size: 256,
                    ..TrainConfig::default()
                },
                scaling: ScalingConfig::default(),
                shared: SharedConfig::default(),
                labels: LabelCompareConfig::default(),
            },
            Preset::Cifar => ExperimentConfig {
                schema_version: SCHEMA_VERSION,
                seed: 1,
                manifest: None,
                color_stats: None,
                source: SourceConfig::Cifar100 {
                    dir: PathBuf::from("data/cifar-100-binary"),
                },
                data: DataConfig {
                    train_per_class: 500,
                    test_per_class: 100,
                },
                model: ArchitectureSpec::desk(100),
                train: TrainConfig {
                    augment: AugmentConfig {
                        min_area_fraction: 0.35,
                        color_jitter_strength: 0.0,
                        output_size: 32,
                        ..AugmentConfig::default()
                    },
                    ..TrainConfig::default()
                },
                scaling: ScalingConfig {
                    sizes: vec![10, 50, 100],
                    replicates: vec![10, 10, 1],
                },
                shared: SharedConfig::default(),
                labels: LabelCompareConfig::default(),
            },
            Preset::Toy => ExperimentConfig {
                schema_version: SCHEMA_VERSION,
                seed: 1,
                manifest: None,
                color_stats: None,
                source: SourceConfig::Synthetic(SyntheticConfig::default()),
                data: DataConfig {
                    train_per_class: 60,
                    test_per_class: 40,
                },
                model: ArchitectureSpec::toy(100),
                train: TrainConfig {
                    epochs: 15,
                    batch_size: 64,
                    schedule: LrSchedule {
                        base: 2e-3,
                        ..LrSchedule::default()
                    },
                    // Stripe orientation carries the class: mirroring or
                    // stretching the image would change it.
                    augment: AugmentConfig {
                        min_area_fraction: 0.6,
                        min_aspect: 0.95,
                        max_aspect: 1.0 / 0.95,
                        color_jitter_strength: 0.0,
                        horizontal_flip: false,
                        output_size: 32,
                        ..AugmentConfig::default()
                    },
                    eval: EvalConfig {
                        views: ViewSpec::center_only(),
                        ..EvalConfig::default()
                    },
                    monitor_every: 0,
                    ..TrainConfig::default()
                },
                scaling: ScalingConfig {
                    sizes: vec![10, 50, 100],
                    replicates: vec![2, 1, 1],
                },
                shared: SharedConfig::default(),
                labels: LabelCompareConfig::default(),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "config schema version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.scaling.sizes.len() != self.scaling.replicates.len() {
            return Err(Error::LengthMismatch {
                what: "scaling replicates",
                expected: self.scaling.sizes.len(),
                actual: self.scaling.replicates.len(),
            });
        }
        if self.data.train_per_class == 0 || self.data.test_per_class == 0 {
            return Err(Error::Config("train_per_class and test_per_class must be positive".into()));
        }
        if self.shared.histogram_bin_pct.is_nan() || self.shared.histogram_bin_pct <= 0.0 {
            return Err(Error::Config("histogram_bin_pct must be positive".into()));
        }
        self.model.validate()?;
        self.train.validate()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).at(path)?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// The category manifest named by `manifest`, if any.
    pub fn load_manifest(&self) -> Result<Option<CategoryManifest>> {
        match self.manifest.as_deref() {
            None => Ok(None),
            Some(BUILTIN_IMAGENET) => CategoryManifest::parse(IMAGENET_CATEGORY_MANIFEST, BUILTIN_IMAGENET).map(Some),
            Some(path) => CategoryManifest::load(path).map(Some),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_toml() {
        for p in [Preset::Paper, Preset::Cifar, Preset::Toy] {
            let c = ExperimentConfig::preset(p);
            c.validate().unwrap();
            let text = c.to_toml().unwrap();
            assert!(text.contains("schema_version = 1"));
            assert_eq!(ExperimentConfig::parse(&text).unwrap(), c);
        }
    }

    #[test]
    fn paper_defaults() {
        let c = ExperimentConfig::preset(Preset::Paper);
        assert_eq!(c.scaling.total_runs(), 28);
        assert_eq!(c.load_manifest().unwrap().unwrap().num_classes(), 100);
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        let text = ExperimentConfig::preset(Preset::Toy)
            .to_toml()
            .unwrap()
            .replace("schema_version = 1", "schema_version = 2");
        assert!(matches!(ExperimentConfig::parse(&text), Err(Error::Config(_))));
    }
}
