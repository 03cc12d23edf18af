use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use sevar_core::harness::config::{parse_override, parse_pairs};
use sevar_core::harness::gradcheck::GRADCHECK_TOL;
use sevar_core::harness::train::SUMMARY_FILE;
use sevar_core::harness::{run_eval, run_gradcheck, run_train, ParamsTable, Summary};
use sevar_core::models::checkpoint;
use sevar_core::{Arch, Error, InputSize, ModelConfig, TrainConfig, VariantKind};

const EXIT_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;

#[derive(Parser)]
#[command(name = "sevar", version, about = "Channel attention variants: train, evaluate, gradient check, count parameters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write metrics.csv, summary.json and model.ckpt.
    Train(RunArgs),
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Finite-difference check of one attention variant and its host block.
    Gradcheck {
        #[arg(long)]
        variant: VariantKind,
        #[arg(long, default_value_t = 64)]
        channels: usize,
        #[arg(long, default_value_t = 16)]
        reduction: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Parameter counts per attention slot and the delta against no attention.
    Params {
        #[arg(long, default_value = "cnn3")]
        arch: Arch,
        #[arg(long, default_value = "none")]
        variant: VariantKind,
        #[arg(long, default_value_t = 16)]
        reduction: usize,
        #[arg(long, default_value_t = 10)]
        num_classes: usize,
        #[arg(long, default_value_t = 32)]
        input_size: usize,
    },
}

/// Configuration layers shared by train and eval. Later layers win:
/// defaults, `--full`, config file, `--set` in order, then the dedicated
/// flags below.
#[derive(Args)]
struct RunArgs {
    /// Flat `key = value` file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Whole dataset and 50 epochs instead of the desk-scale subset.
    #[arg(long)]
    full: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset directory (defaults to $SEVAR_DATA_DIR).
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

impl RunArgs {
    fn layers(&self, base: Vec<(String, String)>) -> Result<Vec<(String, String)>, Error> {
        let mut layers = base;
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::InvalidConfig(format!("cannot read config {}: {e}", path.display())))?;
            layers.extend(parse_pairs(&text)?);
        }
        for s in &self.set {
            layers.push(parse_override(s)?);
        }
        let mut flag = |k: &str, v: String| layers.push((k.to_string(), v));
        if let Some(seed) = self.seed {
            flag("seed", seed.to_string());
        }
        if let Some(out) = &self.out {
            flag("out_dir", out.display().to_string());
        }
        if let Some(dir) = &self.data_dir {
            flag("data_dir", dir.display().to_string());
        }
        Ok(layers)
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        e if e.is_dataset_error() => EXIT_DATA,
        Error::InvalidConfig(_)
        | Error::ReductionTooLarge { .. }
        | Error::InvalidReduction { .. }
        | Error::Checkpoint(_)
        | Error::InvalidTransform(_) => EXIT_CONFIG,
        _ => EXIT_FAILED,
    }
}

fn train(args: &RunArgs) -> Result<(), Error> {
    let cfg = TrainConfig::resolve(args.full, &args.layers(Vec::new())?)?;
    info!("config:\n{}", cfg.to_text());
    println!(
        "training {} / {} on {} for {} epochs, output in {}",
        cfg.arch,
        cfg.variant,
        cfg.dataset,
        cfg.epochs,
        cfg.out_dir.display()
    );
    let outcome = run_train(&cfg, |r| {
        println!(
            "epoch {:>3}  loss {:.4}  acc {:6.2}  test loss {:.4}  top1 {:6.2}  top5 {:6.2}  lr {:.6}",
            r.epoch, r.train_loss, r.train_acc, r.test_loss, r.test_top1, r.test_top5, r.lr
        )
    })?;
    let s = &outcome.summary;
    println!(
        "done: final top1 {:.2}  best top1 {:.2} (epoch {})  params {}  in {:.1}s",
        s.final_metrics.test_top1, s.best_test_top1, s.best_epoch, s.param_count, s.total_seconds
    );
    Ok(())
}

/// Starting config for eval: the run's echoed config when summary.json sits
/// next to the checkpoint, otherwise the model fields from its header.
fn eval_base(ckpt: &Path) -> Result<Vec<(String, String)>, Error> {
    let summary = ckpt.parent().unwrap_or(Path::new(".")).join(SUMMARY_FILE);
    if summary.is_file() {
        return Ok(Summary::read(&summary)?.config.into_iter().collect());
    }
    let bytes = std::fs::read(ckpt)?;
    let m = checkpoint::read_config(&bytes)?;
    Ok(vec![
        ("arch".into(), m.arch.to_string()),
        ("variant".into(), m.variant.to_string()),
        ("reduction".into(), m.reduction.to_string()),
        ("num_classes".into(), m.num_classes.to_string()),
        ("input_size".into(), m.input_size.pixels().to_string()),
    ])
}

fn eval(ckpt: &Path, args: &RunArgs) -> Result<(), Error> {
    if !ckpt.is_file() {
        return Err(Error::Checkpoint(format!("cannot read {}", ckpt.display())));
    }
    let cfg = TrainConfig::resolve(args.full, &args.layers(eval_base(ckpt)?)?)?;
    let result = run_eval(&cfg, ckpt, true)?;
    println!(
        "test loss {:.6}  top1 {:.2}  top5 {:.2}  ({} samples)",
        result.loss, result.top1, result.top5, result.samples
    );
    let out = match &args.out {
        Some(dir) => dir.clone(),
        None => ckpt.parent().unwrap_or(Path::new(".")).to_path_buf(),
    };
    std::fs::create_dir_all(&out)?;
    let path = out.join("eval.json");
    std::fs::write(&path, serde_json::to_string_pretty(&result)? + "\n")?;
    info!("wrote {}", path.display());
    Ok(())
}

fn gradcheck(variant: VariantKind, channels: usize, reduction: usize, seed: u64) -> Result<bool, Error> {
    let out = run_gradcheck(variant, channels, reduction, seed)?;
    println!("variant {variant}  channels {channels}  reduction {reduction}  seed {seed}");
    println!(
        "attention module   max rel error {:.3e}  ({} elements)",
        out.attention.max_rel_error, out.attention.elements_checked
    );
    println!(
        "host block         max rel error {:.3e}  ({} elements, {} skipped at kinks)",
        out.block.max_rel_error, out.block.elements_checked, out.block.kinks_skipped
    );
    let ok = out.passes();
    println!(
        "max rel error {:.3e}  tolerance {:.0e}  {}",
        out.max_rel_error(),
        GRADCHECK_TOL,
        if ok { "PASS" } else { "FAIL" }
    );
    Ok(ok)
}

fn params(arch: Arch, variant: VariantKind, reduction: usize, num_classes: usize, input_size: usize) -> Result<(), Error> {
    let cfg = ModelConfig {
        arch,
        variant,
        reduction,
        num_classes,
        input_size: InputSize::from_pixels(input_size)?,
    };
    print!("{}", ParamsTable::build(cfg)?.render());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(args) => train(args).map(|_| true),
        Command::Eval { checkpoint, run } => eval(checkpoint, run).map(|_| true),
        Command::Gradcheck {
            variant,
            channels,
            reduction,
            seed,
        } => gradcheck(*variant, *channels, *reduction, *seed),
        Command::Params {
            arch,
            variant,
            reduction,
            num_classes,
            input_size,
        } => params(*arch, *variant, *reduction, *num_classes, *input_size).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_FAILED),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
