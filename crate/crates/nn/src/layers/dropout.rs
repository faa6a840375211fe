use ndarray::{Array2, Array3};
use rand::Rng;

use super::{Context, Layer};
use crate::error::{NnError, Result};
use crate::tensor::Batch;

/// Inverted dropout: in training mode each element is kept with probability
/// `1 - rate` and scaled by `1 / (1 - rate)`; inference is the identity.
///
/// Returns the output together with the multiplicative mask that was applied.
pub fn dropout<R: Rng + ?Sized>(
    x: &Array3<f64>,
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<(Array3<f64>, Array3<f64>)> {
    dropout_masked(x, None, rate, training, rng)
}

/// Like [`dropout`], but draws no random numbers at masked timesteps, so the
/// stream consumed by valid positions does not depend on the padding.
pub fn dropout_masked<R: Rng + ?Sized>(
    x: &Array3<f64>,
    mask: Option<&Array2<bool>>,
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<(Array3<f64>, Array3<f64>)> {
    check_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok((x.clone(), Array3::ones(x.raw_dim())));
    }
    let scale = 1.0 / (1.0 - rate);
    let keep = Array3::from_shape_fn(x.raw_dim(), |(b, t, _)| {
        if mask.is_some_and(|m| !m[[b, t]]) || rng.random::<f64>() < rate {
            0.0
        } else {
            scale
        }
    });
    Ok((x * &keep, keep))
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NnError::InvalidRate(rate));
    }
    Ok(())
}

pub struct Dropout {
    name: String,
    rate: f64,
    keep: Option<Array3<f64>>,
}

impl Dropout {
    pub fn new(name: impl Into<String>, rate: f64) -> Result<Self> {
        check_rate(rate)?;
        Ok(Self {
            name: name.into(),
            rate,
            keep: None,
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }
}

impl Layer for Dropout {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, input: &Batch, ctx: &mut Context) -> Result<Batch> {
        let (data, keep) = dropout_masked(&input.data, Some(&input.mask), self.rate, ctx.training, &mut ctx.rng)?;
        self.keep = Some(keep);
        Ok(Batch {
            data,
            mask: input.mask.clone(),
        })
    }

    fn backward(&mut self, grad: &Array3<f64>) -> Array3<f64> {
        grad * self.keep.as_ref().expect("dropout backward before forward")
    }
}
