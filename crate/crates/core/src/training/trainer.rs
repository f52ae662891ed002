use std::borrow::Cow;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::evaluate::{evaluate_with, EvalConfig, Evaluation};
use super::optimizer::{RmsProp, RmsPropConfig};
use super::schedule::LrSchedule;
use crate::augment::{augment_train, to_batch, AugmentConfig, ColorStats, Image, Normalization, ViewSpec};
use crate::data::{DataSource, DatasetSplit, Item};
use crate::error::{Error, IoContext, Result};
use crate::labeling::{LabelKind, LabelScheme};
use crate::model::{build_network, save_checkpoint, ArchitectureSpec, NetworkParams};
use crate::seed::{self, stream};
use crate::tensor::{Matrix, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub optimizer: RmsPropConfig,
    /// L2 coefficient on conv and fully connected weights.
    pub weight_decay: f64,
    pub bn_momentum: f64,
    /// `output_size` is replaced by the network input size.
    pub augment: AugmentConfig,
    pub normalization: Normalization,
    pub eval: EvalConfig,
    /// Test error is logged every this many epochs (0: never) using
    /// `monitor_views`.
    pub monitor_every: usize,
    pub monitor_views: ViewSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 128,
            schedule: LrSchedule::default(),
            optimizer: RmsPropConfig::default(),
            weight_decay: 1e-4,
            bn_momentum: 0.1,
            augment: AugmentConfig::default(),
            normalization: Normalization::default(),
            eval: EvalConfig::default(),
            monitor_every: 1,
            monitor_views: ViewSpec::center_only(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size < 2 {
            return Err(Error::Config("epochs must be positive and batch_size at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config("bn_momentum must be in [0, 1] and weight_decay nonnegative".into()));
        }
        self.augment.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_error: Option<f64>,
    pub lr: f64,
    pub wall_seconds: f64,
}

pub const METRICS_HEADER: &str = "epoch,train_loss,test_error,lr,wall_seconds";

pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for m in metrics {
        let test = m.test_error.map(|e| format!("{e:.6}")).unwrap_or_default();
        s.push_str(&format!(
            "{},{:.8},{},{:e},{:.3}\n",
            m.epoch, m.train_loss, test, m.lr, m.wall_seconds
        ));
    }
    s
}

/// Optional side channels of a training run.
#[derive(Clone, Debug, Default)]
pub struct TrainHooks<'a> {
    pub color_stats: Option<&'a ColorStats>,
    /// Rewritten after every completed epoch, so a diverged run leaves the
    /// last good network behind.
    pub checkpoint: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
}

pub struct TrainOutcome<T> {
    pub network: NetworkParams<T>,
    pub metrics: Vec<EpochMetrics>,
    pub test: Evaluation,
}

const PRELOAD_BUDGET_BYTES: usize = 1 << 30;

/// Decoded images of one item list, kept in memory when they fit the
/// budget and read from the source on every access otherwise.
pub(crate) struct ImageStore<'a> {
    source: &'a DataSource,
    items: &'a [Item],
    cache: Option<Vec<Image>>,
}

impl<'a> ImageStore<'a> {
    pub(crate) fn new(source: &'a DataSource, items: &'a [Item]) -> Result<Self> {
        let mut store = ImageStore { source, items, cache: None };
        if let Some(first) = items.first() {
            let img = source.load(&first.image)?;
            let bytes = img.as_raw().len() * std::mem::size_of::<f32>();
            if bytes.saturating_mul(items.len()) <= PRELOAD_BUDGET_BYTES {
                let cache = items.iter().map(|it| source.load(&it.image)).collect::<Result<_>>()?;
                store.cache = Some(cache);
            }
        }
        Ok(store)
    }

    pub(crate) fn get(&self, i: usize) -> Result<Cow<'_, Image>> {
        match &self.cache {
            Some(c) => Ok(Cow::Borrowed(&c[i])),
            None => self.source.load(&self.items[i].image).map(Cow::Owned),
        }
    }
}

fn category_for(scheme: &LabelScheme, split: &DatasetSplit, class: usize) -> Result<Option<usize>> {
    match scheme.kind {
        LabelKind::ClassOnly => Ok(None),
        LabelKind::ClassCategory => {
            let map = split.category_of.as_ref().ok_or(Error::MissingCategoryMap)?;
            Ok(Some(map[class]))
        }
    }
}

pub fn evaluate_split<T: Real>(
    net: &NetworkParams<T>,
    split: &DatasetSplit,
    items: &[Item],
    scheme: &LabelScheme,
    eval: &EvalConfig,
    normalization: &Normalization,
    source: &DataSource,
) -> Result<Evaluation> {
    let store = ImageStore::new(source, items)?;
    evaluate_store(net, &store, split, scheme, eval, normalization)
}

fn evaluate_store<T: Real>(
    net: &NetworkParams<T>,
    store: &ImageStore<'_>,
    split: &DatasetSplit,
    scheme: &LabelScheme,
    eval: &EvalConfig,
    normalization: &Normalization,
) -> Result<Evaluation> {
    let mut load = |i: usize| Ok((store.get(i)?.into_owned(), store.items[i].class));
    evaluate_with(net, store.items.len(), &mut load, scheme, split.category_of.as_deref(), eval, normalization)
}

fn write_atomic(path: &std::path::Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text).at(&tmp)?;
    std::fs::rename(&tmp, path).at(path)
}

/// Trains a freshly initialised network on `split.train` and evaluates it on
/// `split.test`. Every random choice (initialisation, shuffling,
/// augmentation) is derived from `seed`.
pub fn train<T: Real>(
    split: &DatasetSplit,
    scheme: &LabelScheme,
    arch: &ArchitectureSpec,
    config: &TrainConfig,
    source: &DataSource,
    seed: u64,
    hooks: &TrainHooks<'_>,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    split.validate()?;
    if scheme.num_classes != split.num_classes() {
        return Err(Error::LengthMismatch {
            what: "label scheme classes",
            expected: split.num_classes(),
            actual: scheme.num_classes,
        });
    }
    if split.train.len() < 2 {
        return Err(Error::Empty("training set"));
    }
    let arch = arch.clone().with_output_width(scheme.width());
    let mut net = build_network::<T>(&arch, seed)?;
    let mut opt = RmsProp::new(&net, config.optimizer);
    let mut augment = config.augment.clone();
    augment.output_size = arch.input_size as u32;
    if augment.color_jitter_strength > 0.0 && hooks.color_stats.is_none() {
        return Err(Error::MissingColorStats);
    }

    let train_store = ImageStore::new(source, &split.train)?;
    let test_store = ImageStore::new(source, &split.test)?;
    let monitor = EvalConfig {
        views: config.monitor_views.clone(),
        ..config.eval.clone()
    };
    let width = scheme.width();
    let started = Instant::now();
    let mut metrics = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lr = config.schedule.rate(epoch, config.epochs);
        let mut order: Vec<usize> = (0..split.train.len()).collect();
        order.shuffle(&mut seed::rng(seed, &[stream::SHUFFLE, epoch as u64]));
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let mut images = Vec::with_capacity(chunk.len());
            let mut targets = Matrix {
                rows: chunk.len(),
                cols: width,
                data: vec![T::zero(); chunk.len() * width],
            };
            for (row, &i) in chunk.iter().enumerate() {
                let mut rng = seed::rng(seed, &[stream::AUGMENT, epoch as u64, i as u64]);
                images.push(augment_train(&*train_store.get(i)?, &augment, hooks.color_stats, &mut rng)?);
                let class = split.train[i].class;
                scheme.encode_into(class, category_for(scheme, split, class)?, targets.row_mut(row))?;
            }
            let batch = to_batch::<T>(&images, &config.normalization)?;
            let step = net.train_step(&batch, &targets)?;
            if !step.loss.is_finite() {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    loss: step.loss,
                });
            }
            opt.apply(&mut net, &step.gradients, lr, config.weight_decay)?;
            net.update_running_stats(&step.batch_stats, config.bn_momentum);
            loss_sum += step.loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let test_error = if config.monitor_every > 0 && (epoch + 1) % config.monitor_every == 0 && !split.test.is_empty() {
            Some(evaluate_store(&net, &test_store, split, scheme, &monitor, &config.normalization)?.error().value())
        } else {
            None
        };
        let m = EpochMetrics {
            epoch: epoch + 1,
            train_loss: loss_sum / seen.max(1) as f64,
            test_error,
            lr,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {}/{}: loss {:.4}{} lr {:e}",
            m.epoch,
            config.epochs,
            m.train_loss,
            m.test_error.map(|e| format!(" test error {:.2}%", 100.0 * e)).unwrap_or_default(),
            lr
        );
        metrics.push(m);
        if let Some(path) = &hooks.metrics {
            write_atomic(path, &metrics_csv(&metrics))?;
        }
        if let Some(path) = &hooks.checkpoint {
            save_checkpoint(path, &net, serde_json::json!({ "epoch": epoch + 1, "seed": seed }))?;
        }
    }

    let test = evaluate_store(&net, &test_store, split, scheme, &config.eval, &config.normalization)?;
    Ok(TrainOutcome {
        network: net,
        metrics,
        test,
    })
}
