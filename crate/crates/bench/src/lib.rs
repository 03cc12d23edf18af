//! Inputs shared by the benchmarks.

use sevar_core::{Rng, Tensor};

/// Uniform `[0, 1)` batch of `n` RGB images of side `side`.
pub fn image_batch(n: usize, side: usize, seed: u64) -> Tensor<f32> {
    Tensor::rand_uniform(&mut Rng::new(seed), &[n, 3, side, side], 0.0, 1.0).expect("valid shape")
}

/// Activation-like tensor `[n, c, hw, hw]` in `[-1, 1)`.
pub fn activations(n: usize, c: usize, hw: usize, seed: u64) -> Tensor<f32> {
    Tensor::rand_uniform(&mut Rng::new(seed), &[n, c, hw, hw], -1.0, 1.0).expect("valid shape")
}
