//! Layer vocabulary of the classifier: 3×3 convolution (zero or horizontally
//! circular padding), 2×2 and row-wise max pooling, batch normalization,
//! dropout, fully-connected and softmax cross-entropy.
//!
//! Each op is a method on [`Tape`](crate::tensor::Tape) with its own adjoint
//! rule; the structs here own the parameters and pick train/eval behaviour.

mod conv;
mod dropout;
mod linear;
mod loss;
mod norm;
mod pool;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use conv::{Conv2d, Padding};
pub use dropout::Dropout;
pub use linear::Linear;
pub use loss::one_hot;
pub use norm::{BatchNorm, StatUpdate};

use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-forward-pass context: mode, the dropout RNG, and batch statistics
/// collected in training mode for the caller to commit afterwards.
pub struct Pass {
    pub mode: Mode,
    rng: ChaCha8Rng,
    pub(crate) stats: Vec<StatUpdate>,
    /// Record the gradient of the last convolutional feature map (pool5).
    pub track_features: bool,
}

impl Pass {
    pub fn train(seed: u64) -> Self {
        Pass {
            mode: Mode::Train,
            rng: ChaCha8Rng::seed_from_u64(seed),
            stats: Vec::new(),
            track_features: false,
        }
    }

    pub fn eval() -> Self {
        Pass {
            mode: Mode::Eval,
            rng: ChaCha8Rng::seed_from_u64(0),
            stats: Vec::new(),
            track_features: false,
        }
    }

    pub fn is_train(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn take_stats(&mut self) -> Vec<StatUpdate> {
        std::mem::take(&mut self.stats)
    }
}

/// He-normal initialization: `N(0, 2 / fan_in)`.
pub(crate) fn he_normal<T: Real>(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("positive std");
    Tensor::from_fn(shape, |_| T::of(dist.sample(rng)))
}
