//! ResNet with two-convolution basic blocks and an attention module on
//! each block's residual branch, applied after the second batch norm and
//! before the shortcut is added.

use crate::attention::{Attention, AttentionSpec, VariantKind};
use crate::autograd::Var;
use crate::error::Result;
use crate::layers::{BatchNorm2d, ConvGeometry, Conv2d, Dense, Graph, ParamStore};
use crate::models::InputSize;
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Widths and depth of a ResNet. Stage `i` has `base_width << i` channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ResNetLayout {
    pub base_width: usize,
    pub blocks: [usize; 4],
    /// When false every batch norm is skipped (used by ablation tests).
    pub batch_norm: bool,
}

impl ResNetLayout {
    pub fn resnet18() -> Self {
        ResNetLayout {
            base_width: 64,
            blocks: [2, 2, 2, 2],
            batch_norm: true,
        }
    }

    /// One block per stage at 8 base channels; small enough to gradient check.
    pub fn tiny() -> Self {
        ResNetLayout {
            base_width: 8,
            blocks: [1, 1, 1, 1],
            batch_norm: true,
        }
    }

    pub fn stage_widths(&self) -> [usize; 4] {
        [0, 1, 2, 3].map(|i| self.base_width << i)
    }
}

fn norm<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize, on: bool) -> Result<Option<BatchNorm2d>> {
    if on {
        BatchNorm2d::new(store, name, channels).map(Some)
    } else {
        Ok(None)
    }
}

fn apply_norm<T: Scalar>(bn: &Option<BatchNorm2d>, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
    match bn {
        Some(bn) => bn.forward(g, x),
        None => Ok(x),
    }
}

#[derive(Clone, Debug)]
pub struct Downsample {
    pub conv: Conv2d,
    pub bn: Option<BatchNorm2d>,
}

#[derive(Clone, Debug)]
pub struct BasicBlock {
    pub name: String,
    pub conv1: Conv2d,
    pub bn1: Option<BatchNorm2d>,
    pub conv2: Conv2d,
    pub bn2: Option<BatchNorm2d>,
    pub attention: Attention,
    /// 1x1 projection when the stride or width changes, identity otherwise.
    pub downsample: Option<Downsample>,
}

impl BasicBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &Rng,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        variant: VariantKind,
        reduction: usize,
        batch_norm: bool,
    ) -> Result<Self> {
        let first = ConvGeometry { stride, padding: 1 };
        let second = ConvGeometry { stride: 1, padding: 1 };
        let conv1 = Conv2d::new(store, rng, &format!("{name}.conv1"), in_channels, out_channels, 3, first, false)?;
        let bn1 = norm(store, &format!("{name}.bn1"), out_channels, batch_norm)?;
        let conv2 = Conv2d::new(store, rng, &format!("{name}.conv2"), out_channels, out_channels, 3, second, false)?;
        let bn2 = norm(store, &format!("{name}.bn2"), out_channels, batch_norm)?;
        let spec = AttentionSpec::new(variant, out_channels, reduction)?;
        let attention = Attention::new(store, rng, &format!("{name}.attn"), spec)?;
        let downsample = if stride != 1 || in_channels != out_channels {
            let geom = ConvGeometry { stride, padding: 0 };
            let conv = Conv2d::new(
                store,
                rng,
                &format!("{name}.downsample.conv"),
                in_channels,
                out_channels,
                1,
                geom,
                false,
            )?;
            let bn = norm(store, &format!("{name}.downsample.bn"), out_channels, batch_norm)?;
            Some(Downsample { conv, bn })
        } else {
            None
        };
        Ok(BasicBlock {
            name: name.to_string(),
            conv1,
            bn1,
            conv2,
            bn2,
            attention,
            downsample,
        })
    }

    /// Residual branch up to (not including) the attention module.
    pub fn branch<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(g, x)?;
        let h = apply_norm(&self.bn1, g, h)?;
        let h = g.tape.relu(h);
        let h = self.conv2.forward(g, h)?;
        apply_norm(&self.bn2, g, h)
    }

    pub fn shortcut<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        match &self.downsample {
            Some(d) => {
                let s = d.conv.forward(g, x)?;
                apply_norm(&d.bn, g, s)
            }
            None => Ok(x),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let b = self.branch(g, x)?;
        let b = self.attention.forward(g, b)?;
        let s = self.shortcut(g, x)?;
        let sum = g.tape.add(b, s)?;
        Ok(g.tape.relu(sum))
    }
}

#[derive(Clone, Debug)]
pub struct ResNet {
    pub layout: ResNetLayout,
    pub input_size: InputSize,
    pub stem_conv: Conv2d,
    pub stem_bn: Option<BatchNorm2d>,
    pub stages: Vec<Vec<BasicBlock>>,
    pub fc: Dense,
}

impl ResNet {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &Rng,
        layout: ResNetLayout,
        variant: VariantKind,
        reduction: usize,
        num_classes: usize,
        input_size: InputSize,
    ) -> Result<Self> {
        let widths = layout.stage_widths();
        let (kernel, geom) = match input_size {
            InputSize::S32 => (3, ConvGeometry { stride: 1, padding: 1 }),
            InputSize::S224 => (7, ConvGeometry { stride: 2, padding: 3 }),
        };
        let stem_conv = Conv2d::new(store, rng, "stem.conv", 3, widths[0], kernel, geom, false)?;
        let stem_bn = norm(store, "stem.bn", widths[0], layout.batch_norm)?;

        let mut stages = Vec::with_capacity(4);
        let mut in_ch = widths[0];
        for (s, (&width, &count)) in widths.iter().zip(&layout.blocks).enumerate() {
            let mut blocks = Vec::with_capacity(count);
            for b in 0..count {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                let name = format!("layer{}.{}", s + 1, b);
                blocks.push(BasicBlock::new(
                    store,
                    rng,
                    &name,
                    in_ch,
                    width,
                    stride,
                    variant,
                    reduction,
                    layout.batch_norm,
                )?);
                in_ch = width;
            }
            stages.push(blocks);
        }
        let fc = Dense::new(store, rng, "fc", in_ch, num_classes)?;
        Ok(ResNet {
            layout,
            input_size,
            stem_conv,
            stem_bn,
            stages,
            fc,
        })
    }

    pub fn stem<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.stem_conv.forward(g, x)?;
        let h = apply_norm(&self.stem_bn, g, h)?;
        let h = g.tape.relu(h);
        match self.input_size {
            InputSize::S32 => Ok(h),
            InputSize::S224 => g.tape.maxpool2d(h, 3, ConvGeometry { stride: 2, padding: 1 }),
        }
    }

    /// Output of each stage, in order.
    pub fn stage_outputs<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Vec<Var>> {
        let mut h = self.stem(g, x)?;
        let mut outs = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            for block in stage {
                h = block.forward(g, h)?;
            }
            outs.push(h);
        }
        Ok(outs)
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let outs = self.stage_outputs(g, x)?;
        let last = *outs.last().expect("four stages");
        let pooled = g.tape.spatial_mean(last)?;
        self.fc.forward(g, pooled)
    }

    pub fn blocks(&self) -> impl Iterator<Item = &BasicBlock> {
        self.stages.iter().flatten()
    }

    pub fn attention_slots(&self) -> Vec<(&str, &Attention)> {
        self.blocks().map(|b| (b.name.as_str(), &b.attention)).collect()
    }
}
