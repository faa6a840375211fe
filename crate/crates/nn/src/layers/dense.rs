use ndarray::{linalg::general_mat_mul, Array2, Array3, Axis};
use rand::Rng;

use super::{Context, Layer};
use crate::error::{shape_err, Result};
use crate::init::glorot_uniform;
use crate::param::{Param, Regularizer};
use crate::tensor::Batch;

/// Fully connected layer with linear activation, applied to the last axis.
pub struct Dense {
    name: String,
    pub weight: Param,
    pub bias: Param,
    cache: Option<(Array2<f64>, (usize, usize))>,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        name: impl Into<String>,
        inputs: usize,
        units: usize,
        reg: Regularizer,
        rng: &mut R,
    ) -> Self {
        let name = name.into();
        let w = glorot_uniform(rng, (inputs, units), inputs, units);
        Self {
            weight: Param::new(format!("{name}/kernel"), w).with_reg(reg),
            bias: Param::new(format!("{name}/bias"), Array2::zeros((1, units))),
            name,
            cache: None,
        }
    }

    pub fn units(&self) -> usize {
        self.weight.value.ncols()
    }
}

impl Layer for Dense {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, input: &Batch, _ctx: &mut Context) -> Result<Batch> {
        let (b, t, c) = input.data.dim();
        let (inputs, units) = self.weight.value.dim();
        if c != inputs {
            return Err(shape_err("dense", format!("{inputs} input channels"), c.to_string()));
        }
        let x = input
            .data
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((b * t, c))
            .expect("contiguous");
        let mut y = Array2::zeros((b * t, units));
        for mut row in y.rows_mut() {
            row.assign(&self.bias.value.row(0));
        }
        general_mat_mul(1.0, &x, &self.weight.value, 1.0, &mut y);
        self.cache = Some((x, (b, t)));
        let data = y.into_shape_with_order((b, t, units)).expect("contiguous");
        Ok(Batch {
            data,
            mask: input.mask.clone(),
        })
    }

    fn backward(&mut self, grad: &Array3<f64>) -> Array3<f64> {
        let (x, (b, t)) = self.cache.as_ref().expect("dense backward before forward");
        let units = self.units();
        let g = grad
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((b * t, units))
            .expect("contiguous");
        general_mat_mul(1.0, &x.t(), &g, 1.0, &mut self.weight.grad);
        self.bias.grad.row_mut(0).scaled_add(1.0, &g.sum_axis(Axis(0)));
        let c = self.weight.value.nrows();
        let mut dx = Array2::zeros((b * t, c));
        general_mat_mul(1.0, &g, &self.weight.value.t(), 0.0, &mut dx);
        dx.into_shape_with_order((*b, *t, c)).expect("contiguous")
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_weights_pass_input_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut d = Dense::new("d", 3, 3, Regularizer::NONE, &mut rng);
        d.weight.value = Array2::eye(3);
        let x = Batch::unmasked(Array3::from_shape_fn((2, 4, 3), |(b, t, c)| (b * 12 + t * 3 + c) as f64));
        let y = d.forward(&x, &mut Context::inference()).unwrap();
        assert_eq!(y.data, x.data);
    }

    #[test]
    fn eight_to_one_has_nine_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(Dense::new("d", 8, 1, Regularizer::NONE, &mut rng).trainable_count(), 9);
    }

    #[test]
    fn input_width_is_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut d = Dense::new("d", 4, 2, Regularizer::NONE, &mut rng);
        let x = Batch::unmasked(Array3::zeros((1, 1, 3)));
        assert!(d.forward(&x, &mut Context::inference()).is_err());
    }
}
