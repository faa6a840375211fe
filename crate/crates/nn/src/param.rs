//! Named parameter arrays with gradients and regularization tags.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Elastic-net style penalty coefficients attached to a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Regularizer {
    #[serde(default)]
    pub l1: f64,
    #[serde(default)]
    pub l2: f64,
}

impl Regularizer {
    pub const NONE: Regularizer = Regularizer { l1: 0.0, l2: 0.0 };

    pub fn l1(c: f64) -> Self {
        Self { l1: c, l2: 0.0 }
    }

    pub fn l2(c: f64) -> Self {
        Self { l1: 0.0, l2: c }
    }

    pub fn is_zero(&self) -> bool {
        self.l1 == 0.0 && self.l2 == 0.0
    }
}

/// A parameter array. Every parameter is stored as a 2-D array; biases are
/// `(1, n)` and convolution kernels are flattened to `(kernel * in, out)`.
///
/// Non-trainable entries (batch-norm running statistics) live here too so
/// snapshots capture the full inference state, but the optimizer and the
/// parameter counts skip them.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
    pub reg: Regularizer,
    pub trainable: bool,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Array2<f64>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Self {
            name: name.into(),
            value,
            grad,
            reg: Regularizer::NONE,
            trainable: true,
        }
    }

    pub fn buffer(name: impl Into<String>, value: Array2<f64>) -> Self {
        Self {
            trainable: false,
            ..Self::new(name, value)
        }
    }

    pub fn with_reg(mut self, reg: Regularizer) -> Self {
        self.reg = reg;
        self
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}
