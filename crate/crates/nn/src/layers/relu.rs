use ndarray::{Array3, Zip};

use super::{Context, Layer};
use crate::error::Result;
use crate::tensor::Batch;

pub struct Relu {
    name: String,
    active: Option<Array3<bool>>,
}

impl Relu {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            active: None,
        }
    }
}

impl Layer for Relu {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, input: &Batch, _ctx: &mut Context) -> Result<Batch> {
        self.active = Some(input.data.mapv(|v| v > 0.0));
        Ok(Batch {
            data: input.data.mapv(|v| v.max(0.0)),
            mask: input.mask.clone(),
        })
    }

    fn backward(&mut self, grad: &Array3<f64>) -> Array3<f64> {
        let active = self.active.as_ref().expect("relu backward before forward");
        let mut dx = grad.clone();
        Zip::from(&mut dx).and(active).for_each(|g, &a| {
            if !a {
                *g = 0.0;
            }
        });
        dx
    }
}
