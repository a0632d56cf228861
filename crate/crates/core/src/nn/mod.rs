//! Dense-tensor engine: the handful of layers the classifier needs, with
//! hand-written backward passes, weighted BCE and Adam.

pub mod adam;
pub mod conv;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use conv::{conv_output_extent, Conv2d, Padding};
pub use layers::{Activation, ActivationLayer, BatchNorm, Dense, Dropout, Layer, MaxPool, Sequential};
pub use loss::{weighted_bce, weighted_bce_batch, PROB_CLAMP};
pub use tensor::{concat_axis1, split_axis1, Scalar, Tensor};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("shape: {0}")]
    Shape(String),
    #[error("config: {0}")]
    Config(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
}

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// Per-forward context: train/eval mode and the dropout RNG.
#[derive(Debug, Clone)]
pub struct Ctx {
    pub train: bool,
    pub rng: ChaCha8Rng,
}

impl Ctx {
    pub fn train(seed: u64) -> Self {
        Self {
            train: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn eval() -> Self {
        Self {
            train: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }
}

/// SplitMix64 finalizer, used to derive independent sub-seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
