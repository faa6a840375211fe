//! Batched sequence tensors.

use ndarray::{Array2, Array3};

use crate::error::{shape_err, Result};

/// A batch of sequences shaped `(batch, timesteps, channels)` together with a
/// `(batch, timesteps)` validity mask. `true` marks a real observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub data: Array3<f64>,
    pub mask: Array2<bool>,
}

impl Batch {
    pub fn new(data: Array3<f64>, mask: Array2<bool>) -> Result<Self> {
        let (b, t, _) = data.dim();
        if mask.dim() != (b, t) {
            return Err(shape_err(
                "Batch::new",
                format!("mask ({b}, {t})"),
                format!("{:?}", mask.dim()),
            ));
        }
        Ok(Self { data, mask })
    }

    /// Batch with every timestep valid.
    pub fn unmasked(data: Array3<f64>) -> Self {
        let (b, t, _) = data.dim();
        Self {
            data,
            mask: Array2::from_elem((b, t), true),
        }
    }

    pub fn batch_size(&self) -> usize {
        self.data.dim().0
    }

    pub fn timesteps(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    /// Number of valid timesteps per sample.
    pub fn valid_lengths(&self) -> Vec<usize> {
        self.mask
            .outer_iter()
            .map(|row| row.iter().filter(|&&m| m).count())
            .collect()
    }
}

/// Zero every masked position of `x` in place.
pub(crate) fn zero_masked(x: &mut Array3<f64>, mask: &Array2<bool>) {
    for ((b, t, _), v) in x.indexed_iter_mut() {
        if !mask[[b, t]] {
            *v = 0.0;
        }
    }
}
