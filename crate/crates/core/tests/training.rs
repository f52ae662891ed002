use multicat::augment::{AugmentConfig, Normalization, ViewSpec};
use multicat::data::{split_from_pool, DataSource, DatasetSplit, SourceConfig, SyntheticConfig};
use multicat::labeling::LabelScheme;
use multicat::model::{load_checkpoint, save_checkpoint, ArchitectureSpec, NetworkParams};
use multicat::training::{evaluate_split, train, EvalConfig, TrainConfig, TrainHooks};

fn two_class_set() -> (DataSource, DatasetSplit) {
    let source = DataSource::new(SourceConfig::Synthetic(SyntheticConfig {
        categories: 2,
        classes_per_category: 1,
        image_size: 16,
        train_pool: 32,
        test_pool: 16,
        ..SyntheticConfig::default()
    }));
    let split = split_from_pool(&source.pool().unwrap(), 32, 16, 9).unwrap();
    assert_eq!(split.train.len(), 64);
    (source, split)
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        augment: AugmentConfig {
            min_area_fraction: 1.0,
            min_aspect: 1.0,
            max_aspect: 1.0,
            color_jitter_strength: 0.0,
            horizontal_flip: false,
            ..AugmentConfig::default()
        },
        eval: EvalConfig {
            views: ViewSpec::single(),
            ..EvalConfig::default()
        },
        monitor_every: 0,
        ..TrainConfig::default()
    }
}

#[test]
fn two_class_toy_set_is_fitted() {
    let (source, split) = two_class_set();
    let scheme = LabelScheme::class_only(2);
    let cfg = config(50);
    let out = train::<f32>(&split, &scheme, &ArchitectureSpec::tiny(2), &cfg, &source, 4, &TrainHooks::default()).unwrap();
    let fit = evaluate_split(&out.network, &split, &split.train, &scheme, &cfg.eval, &cfg.normalization, &source).unwrap();
    assert!(fit.error().value() <= 0.05, "train error {}", fit.error());
    let first = out.metrics.first().unwrap().train_loss;
    let last = out.metrics.last().unwrap().train_loss;
    assert!(last < 0.1 * first, "loss {first} -> {last}");
}

#[test]
fn same_seed_same_metrics_and_checkpoint_round_trip() {
    let (source, split) = two_class_set();
    let scheme = LabelScheme::class_category(2, 2);
    let cfg = config(3);
    let arch = ArchitectureSpec::tiny(4);
    let a = train::<f32>(&split, &scheme, &arch, &cfg, &source, 8, &TrainHooks::default()).unwrap();
    let b = train::<f32>(&split, &scheme, &arch, &cfg, &source, 8, &TrainHooks::default()).unwrap();
    let strip = |m: &[multicat::training::EpochMetrics]| -> Vec<(usize, u64, u64)> {
        m.iter().map(|e| (e.epoch, e.train_loss.to_bits(), e.lr.to_bits())).collect()
    };
    assert_eq!(strip(&a.metrics), strip(&b.metrics));
    assert_eq!(a.network, b.network);
    assert_eq!(a.test, b.test);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.bin");
    save_checkpoint(&path, &a.network, serde_json::json!({"note": "roundtrip"})).unwrap();
    let (loaded, meta): (NetworkParams<f32>, _) = load_checkpoint(&path).unwrap();
    assert_eq!(meta["note"], "roundtrip");
    let eval = EvalConfig::default();
    let norm = Normalization::default();
    let before = evaluate_split(&a.network, &split, &split.test, &scheme, &eval, &norm, &source).unwrap();
    let after = evaluate_split(&loaded, &split, &split.test, &scheme, &eval, &norm, &source).unwrap();
    assert_eq!(before.predictions, after.predictions);
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&before.probabilities.data), bits(&after.probabilities.data));
}

#[test]
fn checkpoint_and_metrics_hooks_write_files() {
    let (source, split) = two_class_set();
    let dir = tempfile::tempdir().unwrap();
    let hooks = TrainHooks {
        checkpoint: Some(dir.path().join("ck.bin")),
        metrics: Some(dir.path().join("metrics.csv")),
        ..TrainHooks::default()
    };
    train::<f32>(&split, &LabelScheme::class_only(2), &ArchitectureSpec::tiny(2), &config(2), &source, 1, &hooks).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,test_error,lr,wall_seconds");
    assert_eq!(lines.len(), 3);
    let (net, meta): (NetworkParams<f32>, _) = load_checkpoint(dir.path().join("ck.bin")).unwrap();
    assert_eq!(meta["epoch"], 2);
    assert_eq!(net.spec.output_width, 2);
}

#[test]
fn colour_jitter_without_stats_is_refused() {
    let (source, split) = two_class_set();
    let mut cfg = config(1);
    cfg.augment.color_jitter_strength = 0.1;
    let r = train::<f32>(&split, &LabelScheme::class_only(2), &ArchitectureSpec::tiny(2), &cfg, &source, 1, &TrainHooks::default());
    assert!(matches!(r, Err(multicat::Error::MissingColorStats)));
}
