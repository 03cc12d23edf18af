//! Training and evaluation runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::data::{
    batches, load_cifar10, load_cifar100, load_raw_dir, ChannelStats, Dataset, DatasetName, Pipeline, Transform,
};
use crate::error::{Error, Result};
use crate::harness::config::{TrainConfig, DATA_DIR_ENV};
use crate::harness::metrics::{count_top_k, write_metrics_csv, EvalResult, MetricsRow, Summary};
use crate::layers::{Graph, Mode};
use crate::models::{checkpoint, InputSize, Model, ModelConfig};
use crate::optim::{Adadelta, Optimizer, OptimizerKind, Sgd};
use crate::rng::Rng;

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";

/// The configured data directory, or an error naming both ways to set it.
pub fn data_dir(cfg: &TrainConfig) -> Result<PathBuf> {
    cfg.data_dir.clone().ok_or_else(|| {
        Error::InvalidConfig(format!("no dataset directory: set data_dir or the {DATA_DIR_ENV} environment variable"))
    })
}

/// Full train and test splits of the configured dataset.
pub fn load_datasets(cfg: &TrainConfig) -> Result<(Dataset, Dataset)> {
    let dir = data_dir(cfg)?;
    match cfg.dataset {
        DatasetName::Cifar10 => load_cifar10(&dir),
        DatasetName::Cifar100 => load_cifar100(&dir),
        DatasetName::Raw => load_raw_dir(&dir),
    }
}

/// Normalization statistics of the full training split, cached next to the
/// data when possible.
pub fn dataset_stats(cfg: &TrainConfig, train: &Dataset) -> Result<ChannelStats> {
    match &cfg.data_dir {
        Some(dir) => {
            let cache = dir.join(format!("sevar_stats_{}.txt", cfg.dataset));
            ChannelStats::load_or_compute(&cache, cfg.dataset.name(), train)
        }
        None => ChannelStats::compute(train),
    }
}

/// Train and test pipelines for the configured input size.
///
/// At 32 pixels: pad-4 random crop and flip for training. At 224: random
/// resized crop and flip for training, resize and center crop for testing.
/// Images of another size are first resized and center cropped to the
/// input size. Both end in normalization.
pub fn pipelines(cfg: &TrainConfig, stats: &ChannelStats, image_hw: (usize, usize)) -> Result<(Pipeline, Pipeline)> {
    let s = cfg.input_size.pixels();
    let norm = Transform::Normalize {
        mean: stats.mean,
        std: stats.std,
    };
    let fit = if image_hw == (s, s) {
        vec![]
    } else {
        vec![Transform::Resize { size: s }, Transform::CenterCrop { size: s }]
    };
    let (train, test) = match cfg.input_size {
        InputSize::S32 => {
            let mut test = fit.clone();
            test.push(norm.clone());
            let mut train = fit;
            if cfg.augment {
                train.push(Transform::PadCrop { pad: 4, size: s });
                train.push(Transform::RandomHFlip { p: 0.5 });
            }
            train.push(norm);
            (train, test)
        }
        InputSize::S224 => {
            let test = Pipeline::large_test(stats, s).transforms().to_vec();
            let train = if cfg.augment {
                Pipeline::large_train(stats, s).transforms().to_vec()
            } else {
                test.clone()
            };
            (train, test)
        }
    };
    Ok((Pipeline::new(train)?, Pipeline::new(test)?))
}

pub fn make_optimizer(cfg: &TrainConfig, model: &Model<f32>) -> Box<dyn Optimizer<f32>> {
    let params = model.store.params();
    match cfg.optim {
        OptimizerKind::Adadelta => Box::new(Adadelta::new(params, cfg.rho, cfg.eps)),
        OptimizerKind::Sgd => Box::new(Sgd::new(params, cfg.momentum, cfg.weight_decay)),
    }
}

/// Forward, backward and one optimizer update on a batch. Returns the mean
/// loss and the number of correct top-1 predictions.
pub fn train_step(
    model: &mut Model<f32>,
    opt: &mut dyn Optimizer<f32>,
    x: crate::tensor::Tensor<f32>,
    labels: &[usize],
    lr: f64,
) -> Result<(f64, usize)> {
    let (step, correct) = {
        let mut g = Graph::new(&model.store, Mode::Train);
        let xv = g.input(x);
        let logits = model.forward_graph(&mut g, xv)?;
        let correct = count_top_k(g.tape.value(logits), labels, 1)?;
        let loss = g.tape.softmax_cross_entropy(logits, labels)?;
        (g.finish(loss)?, correct)
    };
    let loss = step.loss as f64;
    model.store.zero_grad();
    model.store.apply(step)?;
    opt.step(model.store.params_mut(), lr)?;
    Ok((loss, correct))
}

/// Mean loss and top-1/top-5 accuracy (percent) in eval mode.
pub fn evaluate(model: &Model<f32>, ds: &Dataset, pipeline: &Pipeline, batch_size: usize) -> Result<EvalResult> {
    let mut loss_sum = 0.0;
    let (mut top1, mut top5, mut n) = (0, 0, 0);
    for batch in batches::<f32>(ds, pipeline, batch_size, None, false)? {
        let (x, labels) = batch?;
        model.check_input(&x)?;
        let mut g = Graph::inference(&model.store, Mode::Eval);
        let xv = g.input(x);
        let logits = model.forward_graph(&mut g, xv)?;
        let k5 = 5.min(model.config.num_classes);
        top1 += count_top_k(g.tape.value(logits), &labels, 1)?;
        top5 += count_top_k(g.tape.value(logits), &labels, k5)?;
        let loss = g.tape.softmax_cross_entropy(logits, &labels)?;
        loss_sum += g.tape.value(loss).item() as f64 * labels.len() as f64;
        n += labels.len();
    }
    if n == 0 {
        return Err(Error::InvalidConfig("evaluation set is empty".into()));
    }
    Ok(EvalResult {
        loss: loss_sum / n as f64,
        top1: 100.0 * top1 as f64 / n as f64,
        top5: 100.0 * top5 as f64 / n as f64,
        samples: n,
    })
}

pub struct TrainOutcome {
    pub model: Model<f32>,
    pub rows: Vec<MetricsRow>,
    pub summary: Summary,
}

/// Apply the configured subset caps.
pub fn apply_subsets(cfg: &TrainConfig, train: &Dataset, test: &Dataset) -> Result<(Dataset, Dataset)> {
    for (cap, ds, key) in [(cfg.subset_train, train, "subset_train"), (cfg.subset_test, test, "subset_test")] {
        if let Some(c) = cap {
            if c > ds.len() {
                return Err(Error::InvalidConfig(format!(
                    "{key} = {c} exceeds the {} samples available",
                    ds.len()
                )));
            }
        }
    }
    Ok((
        cfg.subset_train.map_or_else(|| train.clone(), |n| train.subset(n)),
        cfg.subset_test.map_or_else(|| test.clone(), |n| test.subset(n)),
    ))
}

/// Train on already loaded (and already subset) data. `on_epoch` sees each
/// metrics row as it is produced.
pub fn train_on(
    cfg: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
    stats: &ChannelStats,
    mut on_epoch: impl FnMut(&MetricsRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model_cfg: ModelConfig = cfg.model_config(train.num_classes);
    if model_cfg.num_classes < train.num_classes {
        return Err(Error::InvalidConfig(format!(
            "num_classes {} is below the dataset's {}",
            model_cfg.num_classes, train.num_classes
        )));
    }
    let mut model = Model::<f32>::build(model_cfg, cfg.seed)?;
    let mut opt = make_optimizer(cfg, &model);
    let schedule = cfg.schedule_for()?;
    let (train_pipe, test_pipe) = pipelines(cfg, stats, (train.height, train.width))?;
    let root = Rng::new(cfg.seed);
    let started = Instant::now();
    let mut rows = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = schedule.lr(epoch);
        let shuffle = root.derive_index("epoch", epoch as u64);
        let mut loss_sum = 0.0;
        let (mut correct, mut seen) = (0, 0);
        for batch in batches::<f32>(train, &train_pipe, cfg.batch_size, Some(shuffle), false)? {
            let (x, labels) = batch?;
            model.check_input(&x)?;
            let (loss, hits) = train_step(&mut model, opt.as_mut(), x, &labels, lr)?;
            loss_sum += loss * labels.len() as f64;
            correct += hits;
            seen += labels.len();
        }
        let eval = evaluate(&model, test, &test_pipe, cfg.batch_size)?;
        let row = MetricsRow {
            epoch: epoch + 1,
            train_loss: loss_sum / seen as f64,
            train_acc: 100.0 * correct as f64 / seen as f64,
            test_loss: eval.loss,
            test_top1: eval.top1,
            test_top5: eval.top5,
            lr,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {} loss {:.4} acc {:.2} test loss {:.4} top1 {:.2} top5 {:.2} lr {} ({:.1}s)",
            row.epoch,
            row.train_loss,
            row.train_acc,
            row.test_loss,
            row.test_top1,
            row.test_top5,
            row.lr,
            row.wall_seconds
        );
        on_epoch(&row);
        rows.push(row);
    }

    let final_metrics = *rows.last().expect("at least one epoch");
    let best = rows
        .iter()
        .fold(rows[0], |b, r| if r.test_top1 > b.test_top1 { *r } else { b });
    let summary = Summary {
        arch: cfg.arch.to_string(),
        variant: cfg.variant.to_string(),
        dataset: cfg.dataset.to_string(),
        param_count: model.count_params(),
        attention_params: model.attention_param_count(),
        train_samples: train.len(),
        test_samples: test.len(),
        final_metrics,
        best_test_top1: best.test_top1,
        best_epoch: best.epoch,
        total_seconds: started.elapsed().as_secs_f64(),
        config: cfg.to_pairs(),
    };
    Ok(TrainOutcome { model, rows, summary })
}

pub fn write_outputs(out_dir: &Path, outcome: &TrainOutcome) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    write_metrics_csv(&out_dir.join(METRICS_FILE), &outcome.rows)?;
    outcome.summary.write(&out_dir.join(SUMMARY_FILE))?;
    checkpoint::save(&outcome.model, &out_dir.join(CHECKPOINT_FILE))
}

/// Load data, train, and write metrics.csv, summary.json and model.ckpt.
pub fn run_train(cfg: &TrainConfig, on_epoch: impl FnMut(&MetricsRow)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (train_full, test_full) = load_datasets(cfg)?;
    let stats = dataset_stats(cfg, &train_full)?;
    let (train, test) = apply_subsets(cfg, &train_full, &test_full)?;
    let outcome = train_on(cfg, &train, &test, &stats, on_epoch)?;
    write_outputs(&cfg.out_dir, &outcome)?;
    Ok(outcome)
}

/// Evaluate a checkpoint on the configured test split. With `strict`, the
/// model fields of `cfg` must agree with the checkpoint header.
pub fn run_eval(cfg: &TrainConfig, checkpoint_path: &Path, strict: bool) -> Result<EvalResult> {
    let bytes = fs::read(checkpoint_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(checkpoint_path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let header = checkpoint::read_config(&bytes)?;
    let (train_full, test_full) = load_datasets(cfg)?;
    let expected = cfg.model_config(train_full.num_classes);
    if strict && expected != header {
        return Err(Error::InvalidConfig(format!(
            "checkpoint holds {} / {} (r={}, {} classes, input {}) but the config asks for {} / {} (r={}, {} classes, input {})",
            header.arch,
            header.variant,
            header.reduction,
            header.num_classes,
            header.input_size.pixels(),
            expected.arch,
            expected.variant,
            expected.reduction,
            expected.num_classes,
            expected.input_size.pixels()
        )));
    }
    let model = checkpoint::decode::<f32>(&bytes)?;
    let eval_cfg = TrainConfig {
        input_size: header.input_size,
        ..cfg.clone()
    };
    let stats = dataset_stats(&eval_cfg, &train_full)?;
    let (_, test) = apply_subsets(&eval_cfg, &train_full, &test_full)?;
    let (_, test_pipe) = pipelines(&eval_cfg, &stats, (test.height, test.width))?;
    evaluate(&model, &test, &test_pipe, eval_cfg.batch_size)
}
