//! Host architectures with attention slots: a three-layer CNN and ResNet-18.

pub mod checkpoint;
pub mod cnn3;
pub mod resnet;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::{Attention, VariantKind, DEFAULT_REDUCTION};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::layers::{Graph, Mode, ParamStore};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use cnn3::Cnn3;
pub use resnet::{BasicBlock, ResNet, ResNetLayout};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Cnn3,
    ResNet18,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::Cnn3 => "cnn3",
            Arch::ResNet18 => "resnet18",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Arch::Cnn3 => 0,
            Arch::ResNet18 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Arch::Cnn3),
            1 => Some(Arch::ResNet18),
            _ => None,
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cnn3" => Ok(Arch::Cnn3),
            "resnet18" | "resnet-18" => Ok(Arch::ResNet18),
            other => Err(Error::InvalidConfig(format!("unknown arch `{other}` (expected cnn3 or resnet18)"))),
        }
    }
}

/// Square input resolution the network is built for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum InputSize {
    S32,
    S224,
}

impl InputSize {
    pub fn pixels(self) -> usize {
        match self {
            InputSize::S32 => 32,
            InputSize::S224 => 224,
        }
    }

    pub fn from_pixels(px: usize) -> Result<Self> {
        match px {
            32 => Ok(InputSize::S32),
            224 => Ok(InputSize::S224),
            other => Err(Error::InvalidConfig(format!("input_size must be 32 or 224, got {other}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub arch: Arch,
    pub variant: VariantKind,
    pub reduction: usize,
    pub num_classes: usize,
    pub input_size: InputSize,
}

impl ModelConfig {
    /// 10 classes, 32-pixel input, reduction 16.
    pub fn new(arch: Arch, variant: VariantKind) -> Self {
        ModelConfig {
            arch,
            variant,
            reduction: DEFAULT_REDUCTION,
            num_classes: 10,
            input_size: InputSize::S32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        if self.arch == Arch::Cnn3 && self.input_size != InputSize::S32 {
            return Err(Error::InvalidConfig("cnn3 only supports input_size 32".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub enum Net {
    Cnn3(Cnn3),
    ResNet(ResNet),
}

impl Net {
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        match self {
            Net::Cnn3(n) => n.forward(g, x),
            Net::ResNet(n) => n.forward(g, x),
        }
    }

    pub fn attention_slots(&self) -> Vec<(&str, &Attention)> {
        match self {
            Net::Cnn3(n) => vec![("attn", &n.attention)],
            Net::ResNet(n) => n.attention_slots(),
        }
    }
}

/// A built network together with the store holding its weights.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub net: Net,
}

impl<T: Scalar> Model<T> {
    /// Build from config. Weights are drawn from streams derived from
    /// `seed` and each parameter's name, so variants share every
    /// non-attention weight.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let rng = Rng::new(seed).derive("init");
        let mut store = ParamStore::new();
        let net = match config.arch {
            Arch::Cnn3 => Net::Cnn3(build_cnn3(&mut store, &rng, &config)?),
            Arch::ResNet18 => Net::ResNet(build_resnet18(&mut store, &rng, &config)?),
        };
        Ok(Model { config, store, net })
    }

    /// Logits for `x` recorded on `g`.
    pub fn forward_graph(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        self.net.forward(g, x)
    }

    /// Check that `x` is `[N, 3, S, S]` for the configured input size.
    pub fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = self.config.input_size.pixels();
        let (_, c, h, w) = x.dims4()?;
        if c != 3 || h != s || w != s {
            return Err(Error::mismatch(
                "model input",
                format!("expected [N, 3, {s}, {s}], got {:?}", x.shape()),
            ));
        }
        Ok(())
    }

    /// Logits without touching the store. In train mode batch statistics
    /// are used and the running-stat updates are discarded.
    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut g = Graph::inference(&self.store, mode);
        let xv = g.input(x.clone());
        let out = self.forward_graph(&mut g, xv)?;
        Ok(g.tape.value(out).clone())
    }

    /// Trainable scalars; batch norm running statistics are not counted.
    pub fn count_params(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn attention_slots(&self) -> Vec<(&str, &Attention)> {
        self.net.attention_slots()
    }

    pub fn attention_param_count(&self) -> usize {
        self.attention_slots().iter().map(|(_, a)| a.param_count()).sum()
    }
}

pub fn build_cnn3<T: Scalar>(store: &mut ParamStore<T>, rng: &Rng, cfg: &ModelConfig) -> Result<Cnn3> {
    if cfg.arch != Arch::Cnn3 {
        return Err(Error::InvalidConfig(format!("build_cnn3 called with arch {}", cfg.arch)));
    }
    cfg.validate()?;
    Cnn3::new(store, rng, cfg.variant, cfg.reduction, cfg.num_classes)
}

pub fn build_resnet18<T: Scalar>(store: &mut ParamStore<T>, rng: &Rng, cfg: &ModelConfig) -> Result<ResNet> {
    if cfg.arch != Arch::ResNet18 {
        return Err(Error::InvalidConfig(format!("build_resnet18 called with arch {}", cfg.arch)));
    }
    cfg.validate()?;
    ResNet::new(
        store,
        rng,
        ResNetLayout::resnet18(),
        cfg.variant,
        cfg.reduction,
        cfg.num_classes,
        cfg.input_size,
    )
}
