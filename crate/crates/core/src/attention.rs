//! Channel attention variants.
//!
//! Every variant squeezes `u: [N, C, H, W]` to `z = spatial_mean(u)`, runs `z`
//! through a chain of fully connected layers ending in a sigmoid gate
//! `s: [N, C]`, and returns `u` with each channel scaled by its gate. The
//! variants differ only in the chain. With `m = C / r` and the half-reduction
//! width `h = C / (r / 2)` (all divisions floored):
//!
//! | variant        | chain                                   |
//! |----------------|-----------------------------------------|
//! | `se`           | C→m, m→C                                |
//! | `slow_squeeze` | C→h, h→m, m→C                           |
//! | `slow_excite`  | C→m, m→h, h→C                           |
//! | `slow_slow`    | C→h, h→m, m→h, h→C                      |
//! | `bump`         | C→m, m→m, m→C                           |
//!
//! Every layer but the last is followed by ReLU; the last by sigmoid.
//! `none` has an empty chain and leaves its input untouched.

use std::fmt;
use std::str::FromStr;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::layers::{Dense, Graph, ParamStore};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Default reduction ratio.
pub const DEFAULT_REDUCTION: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VariantKind {
    None,
    Se,
    SlowSqueeze,
    SlowExcite,
    SlowSlow,
    Bump,
}

impl VariantKind {
    pub const ALL: [VariantKind; 6] = [
        VariantKind::None,
        VariantKind::Se,
        VariantKind::SlowSqueeze,
        VariantKind::SlowExcite,
        VariantKind::SlowSlow,
        VariantKind::Bump,
    ];

    /// The variants that actually insert an attention module.
    pub const ATTENTION: [VariantKind; 5] = [
        VariantKind::Se,
        VariantKind::SlowSqueeze,
        VariantKind::SlowExcite,
        VariantKind::SlowSlow,
        VariantKind::Bump,
    ];

    /// Name used in config files and on the command line.
    pub fn name(self) -> &'static str {
        match self {
            VariantKind::None => "none",
            VariantKind::Se => "se",
            VariantKind::SlowSqueeze => "slow_squeeze",
            VariantKind::SlowExcite => "slow_excite",
            VariantKind::SlowSlow => "slow_slow",
            VariantKind::Bump => "bump",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            VariantKind::None => 0,
            VariantKind::Se => 1,
            VariantKind::SlowSqueeze => 2,
            VariantKind::SlowExcite => 3,
            VariantKind::SlowSlow => 4,
            VariantKind::Bump => 5,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    fn is_slow(self) -> bool {
        matches!(
            self,
            VariantKind::SlowSqueeze | VariantKind::SlowExcite | VariantKind::SlowSlow
        )
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown variant {s:?} (expected one of none, se, slow_squeeze, slow_excite, slow_slow, bump)"
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

/// One fully connected layer of the excitation chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FcDim {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

impl FcDim {
    pub fn param_count(self) -> usize {
        self.inputs * self.outputs + self.outputs
    }
}

/// Widths of the excitation chain for `kind` at `channels` and `reduction`.
pub fn make_dims(kind: VariantKind, channels: usize, reduction: usize) -> Result<Vec<FcDim>> {
    if kind == VariantKind::None {
        return Ok(Vec::new());
    }
    if reduction == 0 {
        return Err(Error::InvalidReduction {
            variant: kind.name(),
            reduction,
            reason: "reduction must be positive",
        });
    }
    let m = channels / reduction;
    if m == 0 {
        return Err(Error::ReductionTooLarge {
            channels,
            reduction,
        });
    }
    if kind.is_slow() && reduction < 2 {
        return Err(Error::InvalidReduction {
            variant: kind.name(),
            reduction,
            reason: "two-step variants need reduction >= 2",
        });
    }
    let c = channels;
    let widths: Vec<usize> = match kind {
        VariantKind::None => unreachable!(),
        VariantKind::Se => vec![c, m, c],
        VariantKind::Bump => vec![c, m, m, c],
        VariantKind::SlowSqueeze | VariantKind::SlowExcite | VariantKind::SlowSlow => {
            let h = c / (reduction / 2);
            match kind {
                VariantKind::SlowSqueeze => vec![c, h, m, c],
                VariantKind::SlowExcite => vec![c, m, h, c],
                _ => vec![c, h, m, h, c],
            }
        }
    };
    let last = widths.len() - 2;
    Ok(widths
        .windows(2)
        .enumerate()
        .map(|(i, w)| FcDim {
            inputs: w[0],
            outputs: w[1],
            activation: if i == last {
                Activation::Sigmoid
            } else {
                Activation::Relu
            },
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionSpec {
    pub kind: VariantKind,
    pub channels: usize,
    pub reduction: usize,
    pub dims: Vec<FcDim>,
}

impl AttentionSpec {
    pub fn new(kind: VariantKind, channels: usize, reduction: usize) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidConfig("attention needs at least one channel".into()));
        }
        Ok(AttentionSpec {
            kind,
            channels,
            reduction,
            dims: make_dims(kind, channels, reduction)?,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn param_count(&self) -> usize {
        param_count(self)
    }
}

/// Scalars in the chain, biases included.
pub fn param_count(spec: &AttentionSpec) -> usize {
    spec.dims.iter().map(|d| d.param_count()).sum()
}

/// Explicit chain weights, one `(weight [out, in], bias [out])` pair per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<T> {
    pub layers: Vec<(Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> AttentionParams<T> {
    pub fn zeros(spec: &AttentionSpec) -> Result<Self> {
        let layers = spec
            .dims
            .iter()
            .map(|d| Ok((Tensor::zeros(&[d.outputs, d.inputs])?, Tensor::zeros(&[d.outputs])?)))
            .collect::<Result<_>>()?;
        Ok(AttentionParams { layers })
    }

    /// Uniform random weights and biases in `[-scale, scale)`.
    pub fn random(spec: &AttentionSpec, rng: &mut Rng, scale: f64) -> Result<Self> {
        let layers = spec
            .dims
            .iter()
            .map(|d| {
                Ok((
                    Tensor::rand_uniform(rng, &[d.outputs, d.inputs], -scale, scale)?,
                    Tensor::rand_uniform(rng, &[d.outputs], -scale, scale)?,
                ))
            })
            .collect::<Result<_>>()?;
        Ok(AttentionParams { layers })
    }

    pub fn validate(&self, spec: &AttentionSpec) -> Result<()> {
        if self.layers.len() != spec.dims.len() {
            return Err(Error::mismatch(
                "attention",
                format!("{} parameter layers for a chain of {}", self.layers.len(), spec.dims.len()),
            ));
        }
        for (i, ((w, b), d)) in self.layers.iter().zip(&spec.dims).enumerate() {
            if w.shape() != [d.outputs, d.inputs] || b.shape() != [d.outputs] {
                return Err(Error::mismatch(
                    "attention",
                    format!(
                        "layer {i}: weight {:?} bias {:?}, expected [{}, {}] / [{}]",
                        w.shape(),
                        b.shape(),
                        d.outputs,
                        d.inputs,
                        d.outputs
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Flatten into the leaf order used by [`attention_on_tape`].
    pub fn into_tensors(self) -> Vec<Tensor<T>> {
        self.layers.into_iter().flat_map(|(w, b)| [w, b]).collect()
    }
}

/// Gate `s: [N, C]` for squeezed descriptors `z: [N, C]`.
pub fn excite_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    z: Var,
    spec: &AttentionSpec,
    layers: &[(Var, Var)],
) -> Result<Var> {
    if layers.len() != spec.dims.len() {
        return Err(Error::mismatch(
            "attention",
            format!("{} parameter layers for a chain of {}", layers.len(), spec.dims.len()),
        ));
    }
    let mut h = z;
    for (dim, &(w, b)) in spec.dims.iter().zip(layers) {
        h = tape.dense(h, w, Some(b))?;
        h = match dim.activation {
            Activation::Relu => tape.relu(h),
            Activation::Sigmoid => tape.sigmoid(h),
        };
    }
    Ok(h)
}

/// Squeeze, excite and rescale `u` on a tape.
pub fn attention_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    u: Var,
    spec: &AttentionSpec,
    layers: &[(Var, Var)],
) -> Result<Var> {
    let (_, c, _, _) = tape.value(u).dims4()?;
    if c != spec.channels {
        return Err(Error::mismatch(
            "attention",
            format!("input has {c} channels, module built for {}", spec.channels),
        ));
    }
    if spec.is_identity() {
        return Ok(u);
    }
    let z = tape.spatial_mean(u)?;
    let s = excite_on_tape(tape, z, spec, layers)?;
    tape.channel_scale(u, s)
}

fn bind_params<T: Scalar>(tape: &mut Tape<T>, params: &AttentionParams<T>) -> Vec<(Var, Var)> {
    params
        .layers
        .iter()
        .map(|(w, b)| (tape.constant(w.clone()), tape.constant(b.clone())))
        .collect()
}

/// Per-channel gates `s = excite(spatial_mean(u))`; all ones for `none`.
pub fn gate<T: Scalar>(u: &Tensor<T>, spec: &AttentionSpec, params: &AttentionParams<T>) -> Result<Tensor<T>> {
    params.validate(spec)?;
    let (n, c, _, _) = u.dims4()?;
    if spec.is_identity() {
        return Tensor::ones(&[n, c]);
    }
    let mut tape = Tape::new();
    let layers = bind_params(&mut tape, params);
    let uv = tape.constant(u.clone());
    let z = tape.spatial_mean(uv)?;
    let s = excite_on_tape(&mut tape, z, spec, &layers)?;
    Ok(tape.value(s).clone())
}

/// Forward pass of a standalone attention module on plain tensors.
pub fn attention_forward<T: Scalar>(
    u: &Tensor<T>,
    spec: &AttentionSpec,
    params: &AttentionParams<T>,
) -> Result<Tensor<T>> {
    params.validate(spec)?;
    let mut tape = Tape::new();
    let layers = bind_params(&mut tape, params);
    let uv = tape.constant(u.clone());
    let out = attention_on_tape(&mut tape, uv, spec, &layers)?;
    Ok(tape.value(out).clone())
}

/// Attention module whose weights live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Attention {
    pub spec: AttentionSpec,
    pub fcs: Vec<Dense>,
}

impl Attention {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &Rng, name: &str, spec: AttentionSpec) -> Result<Self> {
        let fcs = spec
            .dims
            .iter()
            .enumerate()
            .map(|(i, d)| Dense::new(store, rng, &format!("{name}.fc{}", i + 1), d.inputs, d.outputs))
            .collect::<Result<_>>()?;
        Ok(Attention { spec, fcs })
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, u: Var) -> Result<Var> {
        let layers: Vec<(Var, Var)> = self
            .fcs
            .iter()
            .map(|fc| (g.param(fc.weight), g.param(fc.bias)))
            .collect();
        attention_on_tape(&mut g.tape, u, &self.spec, &layers)
    }

    /// Current weights as explicit tensors.
    pub fn params<T: Scalar>(&self, store: &ParamStore<T>) -> AttentionParams<T> {
        AttentionParams {
            layers: self
                .fcs
                .iter()
                .map(|fc| {
                    (
                        store.param(fc.weight).value.clone(),
                        store.param(fc.bias).value.clone(),
                    )
                })
                .collect(),
        }
    }
}
