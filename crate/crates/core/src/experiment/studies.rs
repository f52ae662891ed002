use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Grouping};
use super::store::{write_atomic, write_json, ResultsStore, RunResult, RunSpec, HARNESS_VERSION};
use super::tables::render_tables;
use super::{hash_hex, hash_json};
use crate::augment::ColorStats;
use crate::data::{
    random_partition, sample_class_subsets, split_category, split_from_pool, ClassPool, DataSource, DatasetSpec,
    DatasetSplit,
};
use crate::error::{Error, IoContext, Result};
use crate::labeling::{LabelKind, LabelScheme};
use crate::seed::{derive_seed, stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Scaling,
    SharedVsSeparate,
    LabelCompare,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Scaling => "scaling",
            ExperimentKind::SharedVsSeparate => "shared-vs-separate",
            ExperimentKind::LabelCompare => "label-compare",
        }
    }
}

/// What a run contributes to its experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum RunRole {
    Scaling { size: usize, replicate: usize },
    Shared,
    Category { index: usize, category: String },
    LabelArm { kind: LabelKind },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub name: String,
    #[serde(flatten)]
    pub role: RunRole,
    pub run_hash: String,
    pub seed: u64,
    pub result: RunResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub name: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub experiment_id: String,
    pub kind: ExperimentKind,
    pub config_hash: String,
    /// Hash of the config with the seed cleared: equal for experiments that
    /// differ only in their seed.
    pub lineage_hash: String,
    pub manifest_hash: Option<String>,
    pub config: ExperimentConfig,
    /// Category map used by the analytics, when it differs from the runs'
    /// own (random grouping).
    pub category_of: Option<Vec<usize>>,
    pub category_names: Option<Vec<String>>,
    pub runs: Vec<RunEntry>,
    pub failures: Vec<RunFailure>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub harness_version: String,
}

impl ExperimentRecord {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

pub struct StudyOutcome {
    pub record: ExperimentRecord,
    pub directory: std::path::PathBuf,
    /// Names of the runs trained by this invocation.
    pub executed: Vec<String>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn experiment_id(kind: ExperimentKind, config: &ExperimentConfig) -> Result<(String, String, String)> {
    let config_hash = hash_json(&(kind, config))?;
    let mut lineage = config.clone();
    lineage.seed = 0;
    let lineage_hash = hash_json(&(kind, &lineage))?;
    Ok((format!("{}-{}", kind.as_str(), &config_hash[..12]), config_hash, lineage_hash))
}

struct PlannedRun {
    name: String,
    role: RunRole,
    split: DatasetSplit,
    scheme: LabelScheme,
    seed: u64,
}

struct Context {
    source: DataSource,
    color_stats: Option<ColorStats>,
    manifest_hash: Option<String>,
}

fn context(config: &ExperimentConfig) -> Result<(Context, ClassPool)> {
    config.validate()?;
    let source = DataSource::new(config.source.clone());
    let manifest = config.load_manifest()?;
    let pool = match &manifest {
        Some(m) => source.pool()?.resolve(m)?,
        None => source.pool()?,
    };
    let color_stats = if config.train.augment.color_jitter_strength > 0.0 {
        let path = config.color_stats.as_ref().ok_or(Error::MissingColorStats)?;
        if !path.is_file() {
            return Err(Error::MissingColorStats);
        }
        Some(ColorStats::load(path)?)
    } else {
        None
    };
    Ok((
        Context {
            source,
            color_stats,
            manifest_hash: manifest.map(|m| m.content_hash()),
        },
        pool,
    ))
}

fn run_study(
    store: &ResultsStore,
    kind: ExperimentKind,
    config: &ExperimentConfig,
    ctx: &Context,
    plan: Vec<PlannedRun>,
    category_override: Option<(Vec<usize>, Vec<String>)>,
) -> Result<StudyOutcome> {
    let (id, config_hash, lineage_hash) = experiment_id(kind, config)?;
    let dir = store.experiment_dir(&id);
    let record_path = dir.join("record.json");
    if record_path.is_file() {
        let text = std::fs::read_to_string(&record_path).at(&record_path)?;
        let record: ExperimentRecord = serde_json::from_str(&text)?;
        if record.config_hash == config_hash && record.is_complete() {
            log::info!("experiment {id} already complete");
            return Ok(StudyOutcome {
                record,
                directory: dir,
                executed: Vec::new(),
            });
        }
    }
    std::fs::create_dir_all(&dir).at(&dir)?;
    write_atomic(&dir.join("config.toml"), &config.to_toml()?)?;

    let started_unix = now();
    let color_stats_hash = ctx.color_stats.as_ref().map(|s| hash_hex(s.to_text().as_bytes()));
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    let mut executed = Vec::new();
    let total = plan.len();
    for (k, planned) in plan.into_iter().enumerate() {
        let spec = RunSpec {
            source: config.source.clone(),
            model: config.model.clone(),
            train: config.train.clone(),
            scheme: planned.scheme,
            seed: planned.seed,
            split_hash: hash_json(&planned.split)?,
            color_stats_hash: color_stats_hash.clone(),
            harness_version: HARNESS_VERSION.to_string(),
        };
        log::info!("[{}/{}] {} {}", k + 1, total, id, planned.name);
        match store.execute(&spec, &planned.split, &ctx.source, ctx.color_stats.as_ref()) {
            Ok(outcome) => {
                if outcome.executed {
                    executed.push(planned.name.clone());
                }
                runs.push(RunEntry {
                    name: planned.name,
                    role: planned.role,
                    run_hash: outcome.hash,
                    seed: planned.seed,
                    result: outcome.result,
                });
            }
            Err(e) => {
                log::error!("run {} failed: {e}", planned.name);
                failures.push(RunFailure {
                    name: planned.name,
                    message: e.to_string(),
                });
            }
        }
    }
    let (category_of, category_names) = category_override.unzip();
    let record = ExperimentRecord {
        experiment_id: id,
        kind,
        config_hash,
        lineage_hash,
        manifest_hash: ctx.manifest_hash.clone(),
        config: config.clone(),
        category_of,
        category_names,
        runs,
        failures,
        started_unix,
        finished_unix: now(),
        harness_version: HARNESS_VERSION.to_string(),
    };
    if record.is_complete() {
        let tables = dir.join("tables");
        std::fs::create_dir_all(&tables).at(&tables)?;
        for (name, text) in render_tables(&record)? {
            write_atomic(&tables.join(name), &text)?;
        }
        write_json(&record_path, &record)?;
    } else {
        write_json(&dir.join("partial-record.json"), &record)?;
    }
    Ok(StudyOutcome {
        record,
        directory: dir,
        executed,
    })
}

/// One network per (size, replicate); replicates are independent draws of
/// classes and images.
pub fn run_scaling(store: &ResultsStore, config: &ExperimentConfig) -> Result<StudyOutcome> {
    let (ctx, pool) = context(config)?;
    let mut plan = Vec::with_capacity(config.scaling.total_runs());
    for (&size, &reps) in config.scaling.sizes.iter().zip(&config.scaling.replicates) {
        let spec = DatasetSpec {
            num_classes: size,
            num_replicates: reps,
            train_per_class: config.data.train_per_class,
            test_per_class: config.data.test_per_class,
            seed: derive_seed(config.seed, &[stream::SPLIT, size as u64]),
        };
        for (r, split) in sample_class_subsets(&pool, &spec)?.into_iter().enumerate() {
            plan.push(PlannedRun {
                name: format!("size{size}-rep{r}"),
                role: RunRole::Scaling { size, replicate: r },
                scheme: LabelScheme::class_only(size),
                seed: derive_seed(config.seed, &[stream::TRAIN, size as u64, r as u64]),
                split: DatasetSplit {
                    category_of: None,
                    category_names: None,
                    ..split
                },
            });
        }
    }
    run_study(store, ExperimentKind::Scaling, config, &ctx, plan, None)
}

/// The full split with its natural categories, shared by the shared-network
/// and label-comparison experiments.
fn categorised_split(config: &ExperimentConfig, pool: &ClassPool) -> Result<DatasetSplit> {
    let split = split_from_pool(
        pool,
        config.data.train_per_class,
        config.data.test_per_class,
        derive_seed(config.seed, &[stream::SPLIT]),
    )?;
    if split.category_of.is_none() {
        return Err(Error::MissingCategoryMap);
    }
    Ok(split)
}

fn grouped(split: DatasetSplit, grouping: Grouping) -> Result<DatasetSplit> {
    match grouping {
        Grouping::Natural => Ok(split),
        Grouping::Random { seed } => {
            let g = split.num_categories().ok_or(Error::MissingCategoryMap)?;
            let classes: Vec<usize> = (0..split.num_classes()).collect();
            let map = random_partition(&classes, g, seed)?;
            let names = (0..g).map(|k| format!("random-{k:02}")).collect();
            split.with_categories(map, names)
        }
    }
}

/// One shared network over all classes plus one network per category. All
/// networks use the same training seed; the shared network does not see the
/// grouping, so natural and random grouping share it.
pub fn run_shared_vs_separate(store: &ResultsStore, config: &ExperimentConfig) -> Result<StudyOutcome> {
    let (ctx, pool) = context(config)?;
    let base = categorised_split(config, &pool)?;
    let split = grouped(base.clone(), config.shared.grouping)?;
    let seed = derive_seed(config.seed, &[stream::TRAIN]);
    let mut plan = vec![PlannedRun {
        name: "shared".into(),
        role: RunRole::Shared,
        scheme: LabelScheme::class_only(base.num_classes()),
        seed,
        split: base,
    }];
    let names = split.category_names.clone().unwrap_or_default();
    for (g, name) in names.iter().enumerate() {
        let sub = split_category(&split, g)?;
        plan.push(PlannedRun {
            name: format!("category-{name}"),
            role: RunRole::Category {
                index: g,
                category: name.clone(),
            },
            scheme: LabelScheme::class_only(sub.num_classes()),
            seed,
            split: sub,
        });
    }
    let grouping = split.category_of.clone().zip(split.category_names.clone());
    run_study(store, ExperimentKind::SharedVsSeparate, config, &ctx, plan, grouping)
}

/// Two shared networks that differ only in their label scheme.
pub fn run_label_comparison(store: &ResultsStore, config: &ExperimentConfig) -> Result<StudyOutcome> {
    let (ctx, pool) = context(config)?;
    let split = categorised_split(config, &pool)?;
    let seed = derive_seed(config.seed, &[stream::TRAIN]);
    let c = split.num_classes();
    let g = split.num_categories().ok_or(Error::MissingCategoryMap)?;
    let mut plan = Vec::new();
    for (k, &kind) in config.labels.arms.iter().enumerate() {
        let (scheme, base) = match kind {
            LabelKind::ClassOnly => (LabelScheme::class_only(c), "class-only"),
            LabelKind::ClassCategory => (LabelScheme::class_category(c, g), "class-category"),
        };
        plan.push(PlannedRun {
            name: format!("arm{k}-{base}"),
            role: RunRole::LabelArm { kind },
            scheme,
            seed,
            split: split.clone(),
        });
    }
    run_study(store, ExperimentKind::LabelCompare, config, &ctx, plan, None)
}

pub fn run_experiment(store: &ResultsStore, kind: ExperimentKind, config: &ExperimentConfig) -> Result<StudyOutcome> {
    match kind {
        ExperimentKind::Scaling => run_scaling(store, config),
        ExperimentKind::SharedVsSeparate => run_shared_vs_separate(store, config),
        ExperimentKind::LabelCompare => run_label_comparison(store, config),
    }
}

/// The runs an experiment would train, without training them.
pub fn planned_runs(kind: ExperimentKind, config: &ExperimentConfig) -> Result<Vec<String>> {
    match kind {
        ExperimentKind::Scaling => Ok(config
            .scaling
            .sizes
            .iter()
            .zip(&config.scaling.replicates)
            .flat_map(|(s, &r)| (0..r).map(move |k| format!("size{s}-rep{k}")))
            .collect()),
        ExperimentKind::SharedVsSeparate => {
            let (_, pool) = context(config)?;
            let split = grouped(categorised_split(config, &pool)?, config.shared.grouping)?;
            let mut names = vec!["shared".to_string()];
            names.extend(split.category_names.unwrap_or_default().iter().map(|n| format!("category-{n}")));
            Ok(names)
        }
        ExperimentKind::LabelCompare => Ok(vec!["arm0".into(), "arm1".into()]),
    }
}

pub fn load_record(path: impl AsRef<std::path::Path>) -> Result<ExperimentRecord> {
    let mut path = path.as_ref().to_path_buf();
    if path.is_dir() {
        path = path.join("record.json");
    }
    let text = std::fs::read_to_string(&path).at(&path)?;
    Ok(serde_json::from_str(&text)?)
}

/// The image source and the full split a config describes: every class of
/// the manifest (or of the source), with its categories when known.
pub fn full_split(config: &ExperimentConfig) -> Result<(DataSource, DatasetSplit)> {
    config.validate()?;
    let source = DataSource::new(config.source.clone());
    let pool = match config.load_manifest()? {
        Some(m) => source.pool()?.resolve(&m)?,
        None => source.pool()?,
    };
    let split = split_from_pool(
        &pool,
        config.data.train_per_class,
        config.data.test_per_class,
        derive_seed(config.seed, &[stream::SPLIT]),
    )?;
    Ok((source, split))
}

/// Trains one network over the full split, the same run the shared arm of
/// the other experiments would train.
pub fn train_single(
    store: &ResultsStore,
    config: &ExperimentConfig,
    kind: LabelKind,
) -> Result<(RunSpec, super::store::RunOutcome)> {
    let (ctx, _) = context(config)?;
    let (_, split) = full_split(config)?;
    let scheme = match kind {
        LabelKind::ClassOnly => LabelScheme::class_only(split.num_classes()),
        LabelKind::ClassCategory => LabelScheme::class_category(
            split.num_classes(),
            split.num_categories().ok_or(Error::MissingCategoryMap)?,
        ),
    };
    let spec = RunSpec {
        source: config.source.clone(),
        model: config.model.clone(),
        train: config.train.clone(),
        scheme,
        seed: derive_seed(config.seed, &[stream::TRAIN]),
        split_hash: hash_json(&split)?,
        color_stats_hash: ctx.color_stats.as_ref().map(|s| hash_hex(s.to_text().as_bytes())),
        harness_version: HARNESS_VERSION.to_string(),
    };
    let outcome = store.execute(&spec, &split, &ctx.source, ctx.color_stats.as_ref())?;
    Ok((spec, outcome))
}

/// Colour statistics of up to `max_images` training images drawn from the
/// config's full split.
pub fn estimate_color_stats(config: &ExperimentConfig, max_images: usize) -> Result<ColorStats> {
    let (source, split) = full_split(config)?;
    let mut idx: Vec<usize> = (0..split.train.len()).collect();
    rand::seq::SliceRandom::shuffle(
        idx.as_mut_slice(),
        &mut crate::seed::rng(config.seed, &[stream::COLOR_STATS]),
    );
    idx.truncate(max_images.max(1));
    let images = idx
        .iter()
        .map(|&i| source.load(&split.train[i].image))
        .collect::<Result<Vec<_>>>()?;
    ColorStats::from_images(images.iter())
}
