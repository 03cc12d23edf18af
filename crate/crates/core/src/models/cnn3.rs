//! Three-layer CNN with an attention slot after the second convolution.
//!
//! ```text
//! conv1 3->32  3x3 p1, relu, maxpool2        32x32 -> 16x16
//! conv2 32->64 3x3 p1, relu, attn, maxpool2  16x16 -> 8x8
//! conv3 64->128 3x3 p1, relu, maxpool2       8x8 -> 4x4
//! flatten 2048, dense -> classes
//! ```

use crate::attention::{Attention, AttentionSpec, VariantKind};
use crate::autograd::Var;
use crate::error::Result;
use crate::layers::{ConvGeometry, Conv2d, Dense, Graph, ParamStore};
use crate::rng::Rng;
use crate::scalar::Scalar;

pub const WIDTHS: [usize; 3] = [32, 64, 128];
/// Spatial size left after three 2x pools of a 32-pixel input.
pub const FINAL_SPATIAL: usize = 4;

#[derive(Clone, Debug)]
pub struct Cnn3 {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub attention: Attention,
    pub conv3: Conv2d,
    pub fc: Dense,
}

impl Cnn3 {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &Rng,
        variant: VariantKind,
        reduction: usize,
        num_classes: usize,
    ) -> Result<Self> {
        let same = ConvGeometry { stride: 1, padding: 1 };
        let [c1, c2, c3] = WIDTHS;
        let conv1 = Conv2d::new(store, rng, "conv1", 3, c1, 3, same, true)?;
        let conv2 = Conv2d::new(store, rng, "conv2", c1, c2, 3, same, true)?;
        let attention = Attention::new(store, rng, "attn", AttentionSpec::new(variant, c2, reduction)?)?;
        let conv3 = Conv2d::new(store, rng, "conv3", c2, c3, 3, same, true)?;
        let fc = Dense::new(store, rng, "fc", c3 * FINAL_SPATIAL * FINAL_SPATIAL, num_classes)?;
        Ok(Cnn3 {
            conv1,
            conv2,
            attention,
            conv3,
            fc,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(g, x)?;
        let h = g.tape.relu(h);
        let h = g.tape.maxpool2(h)?;

        let h = self.conv2.forward(g, h)?;
        let h = g.tape.relu(h);
        let h = self.attention.forward(g, h)?;
        let h = g.tape.maxpool2(h)?;

        let h = self.conv3.forward(g, h)?;
        let h = g.tape.relu(h);
        let h = g.tape.maxpool2(h)?;

        let h = g.tape.flatten(h)?;
        self.fc.forward(g, h)
    }
}

#[cfg(test)]
mod tests {
    use crate::attention::{self, AttentionSpec, VariantKind};
    use crate::layers::Mode;
    use crate::models::{Arch, Model, ModelConfig};
    use crate::rng::Rng;
    use crate::tensor::Tensor;

    fn conv_count(cin: usize, cout: usize) -> usize {
        cin * cout * 9 + cout
    }

    #[test]
    fn default_param_count_matches_closed_form() {
        let m = Model::<f32>::build(ModelConfig::new(Arch::Cnn3, VariantKind::None), 1).unwrap();
        let expected = conv_count(3, 32) + conv_count(32, 64) + conv_count(64, 128) + 2048 * 10 + 10;
        assert_eq!(expected, 113_738);
        assert_eq!(m.count_params(), expected);
    }

    #[test]
    fn variant_deltas() {
        let base = Model::<f32>::build(ModelConfig::new(Arch::Cnn3, VariantKind::None), 1)
            .unwrap()
            .count_params();
        for v in VariantKind::ALL {
            let m = Model::<f32>::build(ModelConfig::new(Arch::Cnn3, v), 1).unwrap();
            let spec = AttentionSpec::new(v, 64, 16).unwrap();
            assert_eq!(m.count_params() - base, attention::param_count(&spec), "{v}");
        }
        let se = Model::<f32>::build(ModelConfig::new(Arch::Cnn3, VariantKind::Se), 1).unwrap();
        let bump = Model::<f32>::build(ModelConfig::new(Arch::Cnn3, VariantKind::Bump), 1).unwrap();
        assert_eq!(se.count_params() - base, 580);
        assert_eq!(bump.count_params() - se.count_params(), 20);
    }

    #[test]
    fn logits_shape_and_row_independence() {
        let m = Model::<f32>::build(ModelConfig::new(Arch::Cnn3, VariantKind::Bump), 3).unwrap();
        let x = Tensor::rand_uniform(&mut Rng::new(5), &[4, 3, 32, 32], 0.0, 1.0).unwrap();
        let y = m.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.shape(), &[4, 10]);

        let one = x.sample(0).unwrap();
        let pair = Tensor::stack(&[one.clone(), one]).unwrap().reshape(&[2, 3, 32, 32]).unwrap();
        let y = m.forward(&pair, Mode::Eval).unwrap();
        assert_eq!(y.data()[..10], y.data()[10..]);
    }

    #[test]
    fn shared_weights_across_variants() {
        let a = Model::<f32>::build(ModelConfig::new(Arch::Cnn3, VariantKind::None), 9).unwrap();
        let b = Model::<f32>::build(ModelConfig::new(Arch::Cnn3, VariantKind::SlowSlow), 9).unwrap();
        for p in a.store.params() {
            let q = b.store.params().iter().find(|q| q.name == p.name).unwrap();
            assert_eq!(p.value.data(), q.value.data(), "{}", p.name);
        }
    }
}
