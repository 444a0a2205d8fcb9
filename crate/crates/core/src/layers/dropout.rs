use rand::Rng;

use super::Pass;
use crate::error::{ensure, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

/// Inverted dropout: survivors are scaled by `1 / (1 - rate)` in training,
/// and evaluation is the identity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dropout {
    rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        ensure!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1), got {rate}");
        Ok(Dropout { rate })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Draw a mask for `shape` from the pass RNG.
    pub fn sample_mask<T: Real>(&self, shape: &[usize], pass: &mut Pass) -> Tensor<T> {
        let keep = 1.0 - self.rate;
        let scale = T::of(1.0 / keep);
        Tensor::from_fn(shape, |_| {
            if pass.rng.random::<f64>() < keep {
                scale
            } else {
                T::zero()
            }
        })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, x: Var, pass: &mut Pass) -> Result<Var> {
        if !pass.is_train() || self.rate == 0.0 {
            return Ok(x);
        }
        let mask = self.sample_mask(tape.shape(x), pass);
        tape.mul_mask(x, mask)
    }
}
