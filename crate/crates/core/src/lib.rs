//! Squeeze-and-excitation style channel attention variants and the small
//! CPU deep-learning stack needed to train and verify them.

pub mod attention;
pub mod autograd;
pub mod data;
pub mod error;
pub mod harness;
pub mod layers;
pub mod models;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use attention::VariantKind;
pub use autograd::{finite_diff_check, GradCheckReport, Tape, Var};
pub use error::{Error, Result};
pub use harness::TrainConfig;
pub use models::{Arch, InputSize, Model, ModelConfig};
pub use rng::Rng;
pub use scalar::Scalar;
pub use tensor::Tensor;
