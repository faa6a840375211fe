//! Differentiable building blocks.
//!
//! Every layer maps a [`Batch`] to a [`Batch`] and caches whatever it needs
//! for the backward pass. `backward` consumes the gradient of the loss with
//! respect to the layer output, accumulates parameter gradients, and returns
//! the gradient with respect to the layer input.
//!
//! Masked timesteps are treated as absent: sequence layers zero their outputs
//! there and never let them influence valid positions.

mod batchnorm;
mod composite;
mod conv;
mod dense;
mod dropout;
mod pooling;
mod recurrent;
mod relu;

pub use batchnorm::BatchNorm;
pub use composite::{InceptionModule, Residual, Sequential};
pub use conv::Conv1d;
pub use dense::Dense;
pub use dropout::{dropout, dropout_masked, Dropout};
pub use pooling::{GlobalAvgPool, MaxPool1d};
pub use recurrent::{Bidirectional, CellKind, Recurrent};
pub use relu::Relu;

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::param::Param;
use crate::tensor::Batch;

/// Per-call execution state: training flag and the dropout random stream.
pub struct Context {
    pub training: bool,
    pub rng: ChaCha8Rng,
}

impl Context {
    pub fn training(seed: u64) -> Self {
        Self {
            training: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn inference() -> Self {
        Self {
            training: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }
}

pub trait Layer: Send {
    fn name(&self) -> &str;

    fn forward(&mut self, input: &Batch, ctx: &mut Context) -> Result<Batch>;

    /// Panics if called without a preceding `forward`.
    fn backward(&mut self, grad: &Array3<f64>) -> Array3<f64>;

    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }

    fn trainable_count(&self) -> usize {
        self.params()
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.len())
            .sum()
    }
}
