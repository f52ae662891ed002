use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use multicat::analytics::{fig1_csv, fig2_csv, fig3_csv, CategoryComparison};
use multicat::augment::{Normalization, ViewSpec};
use multicat::experiment::{
    estimate_color_stats, full_split, hash_json, load_record, render_tables, run_experiment, scaling_summary,
    shared_summary, train_single, ExperimentConfig, ExperimentKind, ExperimentRecord, Grouping, Preset, ResultsStore,
};
use multicat::labeling::{LabelKind, LabelScheme};
use multicat::model::{load_checkpoint, NetworkParams};
use multicat::training::{evaluate_split, EvalConfig};

const DEVICE_VAR: &str = "MULTICAT_DEVICE";

#[derive(Parser)]
#[command(name = "multicat", version, about = "Multi-category image classification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Paper,
    Cifar,
    Toy,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Paper => Preset::Paper,
            PresetArg::Cifar => Preset::Cifar,
            PresetArg::Toy => Preset::Toy,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LabelArg {
    ClassOnly,
    ClassCategory,
}

impl From<LabelArg> for LabelKind {
    fn from(l: LabelArg) -> Self {
        match l {
            LabelArg::ClassOnly => LabelKind::ClassOnly,
            LabelArg::ClassCategory => LabelKind::ClassCategory,
        }
    }
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment config; overrides --preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "toy")]
    preset: PresetArg,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Results store root. With --resume, an experiment directory inside it.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Continue the experiment whose directory is given by --out, using the
    /// config saved there.
    #[arg(long)]
    resume: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Print a preset (or the loaded config) as TOML.
    Config {
        #[command(flatten)]
        common: Common,
    },
    /// Draw the config's split and write it to the store; optionally estimate
    /// colour statistics for lighting augmentation.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        color_stats: bool,
        /// Training images used for the colour statistics.
        #[arg(long, default_value_t = 10_000)]
        color_images: usize,
    },
    /// Train one network over every class of the config.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "class-only")]
        labels: LabelArg,
    },
    /// Evaluate a checkpoint on the config's test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "class-only")]
        labels: LabelArg,
        /// Use a single centre view instead of the configured views.
        #[arg(long)]
        center_only: bool,
    },
    /// Error as a function of the number of classes.
    Scaling {
        #[command(flatten)]
        common: Common,
    },
    /// One shared network against one network per category.
    SharedVsSeparate {
        #[command(flatten)]
        common: Common,
        /// Deal classes into random groups instead of the natural categories.
        #[arg(long)]
        random_grouping: Option<u64>,
    },
    /// Class-only labels against class/category labels.
    LabelCompare {
        #[command(flatten)]
        common: Common,
    },
    /// Recompute every table of an experiment from its stored confusion
    /// matrices.
    Report { experiment: PathBuf },
    /// Print figure data (1: scaling curve, 2: per-category bars, 3: delta
    /// histogram). Figure 2 accepts several experiments, e.g. natural and
    /// random grouping.
    EmitFigure {
        #[arg(value_parser = clap::value_parser!(u8).range(1..=3))]
        figure: u8,
        #[arg(required = true)]
        experiments: Vec<PathBuf>,
    },
}

fn check_device() -> Result<()> {
    match std::env::var(DEVICE_VAR) {
        Err(_) => Ok(()),
        Ok(v) if v.eq_ignore_ascii_case("cpu") => Ok(()),
        Ok(v) => bail!("{DEVICE_VAR}={v}: only the `cpu` backend is available"),
    }
}

/// Config and store for a command, honouring --resume.
fn resolve(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    if common.resume {
        let path = common.out.join("config.toml");
        let config = ExperimentConfig::load(&path).with_context(|| format!("--resume needs {}", path.display()))?;
        let root = common
            .out
            .parent()
            .and_then(Path::parent)
            .context("--resume expects <root>/experiments/<id>")?
            .to_path_buf();
        return Ok((config, root));
    }
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => ExperimentConfig::preset(common.preset.into()),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok((config, common.out.clone()))
}

fn study(common: &Common, kind: ExperimentKind, edit: impl FnOnce(&mut ExperimentConfig)) -> Result<ExitCode> {
    let (mut config, root) = resolve(common)?;
    if !common.resume {
        edit(&mut config);
    }
    let store = ResultsStore::open(&root)?;
    let outcome = run_experiment(&store, kind, &config)?;
    let record = &outcome.record;
    println!("experiment {} ({} runs, {} trained now)", record.experiment_id, record.runs.len(), outcome.executed.len());
    println!("directory {}", outcome.directory.display());
    if !record.is_complete() {
        for f in &record.failures {
            eprintln!("run {} failed: {}", f.name, f.message);
        }
        eprintln!("partial results kept; rerun with --resume --out {}", outcome.directory.display());
        return Ok(ExitCode::FAILURE);
    }
    for (name, text) in render_tables(record)? {
        if name.starts_with("table") {
            println!("\n{name}\n{text}");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn figure(n: u8, records: &[ExperimentRecord]) -> Result<String> {
    match n {
        1 => {
            let [r] = records else { bail!("figure 1 takes one scaling experiment") };
            Ok(fig1_csv(&scaling_summary(r)?.curve))
        }
        2 => {
            let mut rows = Vec::new();
            for r in records {
                let s = shared_summary(r)?;
                for (g, name) in s.category_names.iter().enumerate() {
                    rows.push(CategoryComparison {
                        grouping: s.grouping.clone(),
                        category: name.clone(),
                        separate_error: s.separate_errors[g].value(),
                        shared_error: s.shared_errors[g].value(),
                    });
                }
            }
            Ok(fig2_csv(&rows))
        }
        _ => {
            let [r] = records else { bail!("figure 3 takes one shared-vs-separate experiment") };
            Ok(fig3_csv(&shared_summary(r)?.histogram))
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    check_device()?;
    match cli.command {
        Command::Config { common } => {
            let (config, _) = resolve(&common)?;
            print!("{}", config.to_toml()?);
        }
        Command::Sample {
            common,
            color_stats,
            color_images,
        } => {
            let (config, root) = resolve(&common)?;
            let (_, split) = full_split(&config)?;
            let hash = hash_json(&split)?;
            let dir = root.join("samples");
            std::fs::create_dir_all(&dir)?;
            let path = dir.join(format!("split-{}.json", &hash[..12]));
            std::fs::write(&path, serde_json::to_string_pretty(&split)?)?;
            println!(
                "{} classes, {} categories, {} train / {} test images -> {}",
                split.num_classes(),
                split.num_categories().unwrap_or(0),
                split.train.len(),
                split.test.len(),
                path.display()
            );
            if color_stats {
                let stats = estimate_color_stats(&config, color_images)?;
                let target = config.color_stats.clone().unwrap_or_else(|| root.join("color_stats.txt"));
                stats.save(&target)?;
                println!("colour statistics -> {}", target.display());
            }
        }
        Command::Train { common, labels } => {
            let (config, root) = resolve(&common)?;
            let store = ResultsStore::open(&root)?;
            let (_, outcome) = train_single(&store, &config, labels.into())?;
            println!(
                "test error {} ({})",
                outcome.result.error(),
                if outcome.executed { "trained" } else { "already in store" }
            );
            println!("run directory {}", store.run_dir(&outcome.hash).display());
        }
        Command::Evaluate {
            common,
            checkpoint,
            labels,
            center_only,
        } => {
            let (config, _) = resolve(&common)?;
            let (source, split) = full_split(&config)?;
            let (net, _): (NetworkParams<f32>, _) = load_checkpoint(&checkpoint)?;
            let scheme = match LabelKind::from(labels) {
                LabelKind::ClassOnly => LabelScheme::class_only(split.num_classes()),
                LabelKind::ClassCategory => {
                    LabelScheme::class_category(split.num_classes(), split.num_categories().unwrap_or(0))
                }
            };
            let eval = if center_only {
                EvalConfig {
                    views: ViewSpec::center_only(),
                    ..config.train.eval.clone()
                }
            } else {
                config.train.eval.clone()
            };
            let norm: Normalization = config.train.normalization;
            let e = evaluate_split(&net, &split, &split.test, &scheme, &eval, &norm, &source)?;
            println!("test error {}", e.error());
            if split.category_of.is_some() {
                println!("inter-category error {}", e.confusion.leakage()?.inter_category_error);
            }
        }
        Command::Scaling { common } => return study(&common, ExperimentKind::Scaling, |_| {}),
        Command::SharedVsSeparate {
            common,
            random_grouping,
        } => {
            return study(&common, ExperimentKind::SharedVsSeparate, |c| {
                if let Some(seed) = random_grouping {
                    c.shared.grouping = Grouping::Random { seed };
                }
            })
        }
        Command::LabelCompare { common } => return study(&common, ExperimentKind::LabelCompare, |_| {}),
        Command::Report { experiment } => {
            let record = load_record(&experiment)?;
            let dir = if experiment.is_dir() {
                experiment.clone()
            } else {
                experiment.parent().map(Path::to_path_buf).unwrap_or_default()
            };
            let tables = dir.join("tables");
            std::fs::create_dir_all(&tables)?;
            for (name, text) in render_tables(&record)? {
                std::fs::write(tables.join(&name), &text)?;
                println!("{name}\n{text}");
            }
        }
        Command::EmitFigure { figure: n, experiments } => {
            let records = experiments.iter().map(load_record).collect::<multicat::Result<Vec<_>>>()?;
            print!("{}", figure(n, &records)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
