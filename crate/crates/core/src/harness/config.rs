//! Flat `key = value` run configuration.
//!
//! Values are resolved in increasing precedence: built-in defaults (which
//! depend on `arch`), full-scale mode, the config file, then `--set`
//! overrides. `#` starts a comment; blank lines are ignored.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::attention::{VariantKind, DEFAULT_REDUCTION};
use crate::data::DatasetName;
use crate::error::{Error, Result};
use crate::models::{Arch, InputSize, ModelConfig};
use crate::optim::{LrSchedule, OptimizerKind, ADADELTA_EPS, ADADELTA_RHO};

pub const DATA_DIR_ENV: &str = "SEVAR_DATA_DIR";
pub const DEFAULT_SEED: u64 = 42;
pub const DESK_SUBSET_TRAIN: usize = 5000;
pub const DESK_SUBSET_TEST: usize = 1000;
pub const DESK_EPOCHS: usize = 10;
pub const FULL_EPOCHS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleKind {
    /// Decay by `gamma` every `step_every` epochs.
    Step,
    /// Decay by `gamma` at 50% and 75% of the epochs.
    MultiStep,
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "step" => Ok(ScheduleKind::Step),
            "multistep" => Ok(ScheduleKind::MultiStep),
            other => Err(Error::InvalidConfig(format!("unknown schedule `{other}`"))),
        }
    }
}

impl ScheduleKind {
    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::Step => "step",
            ScheduleKind::MultiStep => "multistep",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub arch: Arch,
    pub variant: VariantKind,
    pub reduction: usize,
    /// `None` takes the class count of the dataset.
    pub num_classes: Option<usize>,
    pub input_size: InputSize,
    pub dataset: DatasetName,
    pub data_dir: Option<PathBuf>,
    pub optim: OptimizerKind,
    pub lr: f64,
    pub schedule: ScheduleKind,
    pub gamma: f64,
    pub step_every: usize,
    pub rho: f64,
    pub eps: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub subset_train: Option<usize>,
    pub subset_test: Option<usize>,
    pub augment: bool,
}

/// Keys in the order they are written back out.
pub const KEYS: [&str; 24] = [
    "arch",
    "variant",
    "reduction",
    "num_classes",
    "input_size",
    "dataset",
    "data_dir",
    "optim",
    "lr",
    "schedule",
    "gamma",
    "step_every",
    "rho",
    "eps",
    "momentum",
    "weight_decay",
    "batch_size",
    "epochs",
    "seed",
    "out_dir",
    "subset_train",
    "subset_test",
    "augment",
    "version",
];

const CONFIG_VERSION: &str = "1";

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V>
where
    V::Err: Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::InvalidConfig(format!("{key} = {value:?}: {e}")))
}

fn parse_opt(key: &str, value: &str) -> Result<Option<usize>> {
    match value.trim() {
        "none" | "" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        v => Err(Error::InvalidConfig(format!("{key} = {v:?}: expected true or false"))),
    }
}

fn opt_text(v: Option<usize>) -> String {
    v.map_or_else(|| "none".to_string(), |n| n.to_string())
}

/// Parse `key = value` lines.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key = value, got {raw:?}", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Parse one `key=value` override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("override {s:?} is not key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

impl TrainConfig {
    /// Defaults for `arch` at desk scale.
    pub fn defaults(arch: Arch) -> Self {
        let data_dir = std::env::var_os(DATA_DIR_ENV).map(PathBuf::from);
        let mut cfg = TrainConfig {
            arch,
            variant: VariantKind::None,
            reduction: DEFAULT_REDUCTION,
            num_classes: None,
            input_size: InputSize::S32,
            dataset: DatasetName::Cifar10,
            data_dir,
            optim: OptimizerKind::Adadelta,
            lr: 1.0,
            schedule: ScheduleKind::Step,
            gamma: 0.7,
            step_every: 1,
            rho: ADADELTA_RHO,
            eps: ADADELTA_EPS,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 64,
            epochs: DESK_EPOCHS,
            seed: DEFAULT_SEED,
            out_dir: PathBuf::from("runs"),
            subset_train: Some(DESK_SUBSET_TRAIN),
            subset_test: Some(DESK_SUBSET_TEST),
            augment: true,
        };
        if arch == Arch::ResNet18 {
            cfg.optim = OptimizerKind::Sgd;
            cfg.lr = 0.1;
            cfg.schedule = ScheduleKind::MultiStep;
            cfg.gamma = 0.1;
            cfg.batch_size = 32;
        }
        cfg
    }

    /// Resolve a configuration from layered `key = value` pairs.
    pub fn resolve(full: bool, layers: &[(String, String)]) -> Result<Self> {
        // The arch decides the defaults, so find its final value first.
        let arch = match layers.iter().rev().find(|(k, _)| k == "arch") {
            Some((_, v)) => v.parse()?,
            None => Arch::Cnn3,
        };
        let mut cfg = Self::defaults(arch);
        if full {
            cfg.subset_train = None;
            cfg.subset_test = None;
            cfg.epochs = FULL_EPOCHS;
        }
        for (k, v) in layers {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, full: bool, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read config {}: {e}", path.display())))?;
        let mut layers = parse_pairs(&text)?;
        layers.extend_from_slice(overrides);
        Self::resolve(full, &layers)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "arch" => self.arch = parse(key, value)?,
            "variant" => self.variant = parse(key, value)?,
            "reduction" => self.reduction = parse(key, value)?,
            "num_classes" => self.num_classes = parse_opt(key, value)?,
            "input_size" => self.input_size = InputSize::from_pixels(parse(key, value)?)?,
            "dataset" => self.dataset = parse(key, value)?,
            "data_dir" => {
                self.data_dir = match value.trim() {
                    "" | "none" => None,
                    v => Some(PathBuf::from(v)),
                }
            }
            "optim" => self.optim = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "schedule" => self.schedule = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "step_every" => self.step_every = parse(key, value)?,
            "rho" => self.rho = parse(key, value)?,
            "eps" => self.eps = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value.trim()),
            "subset_train" => self.subset_train = parse_opt(key, value)?,
            "subset_test" => self.subset_test = parse_opt(key, value)?,
            "augment" => self.augment = parse_bool(key, value)?,
            "version" => {
                if value.trim() != CONFIG_VERSION {
                    return Err(Error::InvalidConfig(format!("unsupported config version {value}")));
                }
            }
            other => return Err(Error::InvalidConfig(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.rho) || !(self.eps > 0.0) {
            return fail("adadelta needs 0 <= rho < 1 and eps > 0".into());
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return fail("sgd needs 0 <= momentum < 1 and weight_decay >= 0".into());
        }
        if self.subset_train == Some(0) || self.subset_test == Some(0) {
            return fail("subset sizes must be positive".into());
        }
        self.schedule_for()?;
        if let Some(k) = self.num_classes {
            self.model_config(k).validate()?;
        } else {
            self.model_config(2).validate()?;
        }
        Ok(())
    }

    pub fn schedule_for(&self) -> Result<LrSchedule> {
        match self.schedule {
            ScheduleKind::Step => LrSchedule::step(self.lr, self.gamma, self.step_every),
            ScheduleKind::MultiStep => LrSchedule::half_and_three_quarters(self.lr, self.gamma, self.epochs),
        }
    }

    pub fn model_config(&self, num_classes: usize) -> ModelConfig {
        ModelConfig {
            arch: self.arch,
            variant: self.variant,
            reduction: self.reduction,
            num_classes: self.num_classes.unwrap_or(num_classes),
            input_size: self.input_size,
        }
    }

    /// Every key with its current value; feeding these back to
    /// [`TrainConfig::resolve`] reproduces this config.
    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let v = |s: &dyn Display| s.to_string();
        let pairs = [
            ("arch", v(&self.arch)),
            ("variant", v(&self.variant)),
            ("reduction", v(&self.reduction)),
            ("num_classes", opt_text(self.num_classes)),
            ("input_size", v(&self.input_size.pixels())),
            ("dataset", v(&self.dataset)),
            (
                "data_dir",
                self.data_dir
                    .as_ref()
                    .map_or_else(|| "none".into(), |p| p.display().to_string()),
            ),
            ("optim", v(&self.optim)),
            ("lr", v(&self.lr)),
            ("schedule", self.schedule.name().to_string()),
            ("gamma", v(&self.gamma)),
            ("step_every", v(&self.step_every)),
            ("rho", v(&self.rho)),
            ("eps", v(&self.eps)),
            ("momentum", v(&self.momentum)),
            ("weight_decay", v(&self.weight_decay)),
            ("batch_size", v(&self.batch_size)),
            ("epochs", v(&self.epochs)),
            ("seed", v(&self.seed)),
            ("out_dir", self.out_dir.display().to_string()),
            ("subset_train", opt_text(self.subset_train)),
            ("subset_test", opt_text(self.subset_test)),
            ("augment", v(&self.augment)),
            ("version", CONFIG_VERSION.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn to_text(&self) -> String {
        let pairs = self.to_pairs();
        KEYS.iter().map(|k| format!("{k} = {}\n", pairs[*k])).collect()
    }
}
