use ndarray::{Array1, Array2, Array3};

use super::{Context, Layer};
use crate::error::{shape_err, NnError, Result};
use crate::param::Param;
use crate::tensor::Batch;

pub const DEFAULT_MOMENTUM: f64 = 0.99;
pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Per-channel batch normalization over all valid `(batch, time)` positions.
///
/// Training mode normalizes with the batch statistics (biased variance) and
/// folds them into the running estimates as
/// `running = momentum * running + (1 - momentum) * batch`.
/// Inference mode uses the running estimates.
pub struct BatchNorm {
    name: String,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    momentum: f64,
    epsilon: f64,
    cache: Option<BnCache>,
}

struct BnCache {
    xhat: Array3<f64>,
    inv_std: Array1<f64>,
    valid: Vec<bool>,
    count: usize,
    training: bool,
}

impl BatchNorm {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        Self::with_options(name, channels, DEFAULT_MOMENTUM, DEFAULT_EPSILON)
    }

    pub fn with_options(name: impl Into<String>, channels: usize, momentum: f64, epsilon: f64) -> Self {
        let name = name.into();
        Self {
            gamma: Param::new(format!("{name}/gamma"), Array2::ones((1, channels))),
            beta: Param::new(format!("{name}/beta"), Array2::zeros((1, channels))),
            running_mean: Param::buffer(format!("{name}/moving_mean"), Array2::zeros((1, channels))),
            running_var: Param::buffer(format!("{name}/moving_variance"), Array2::ones((1, channels))),
            name,
            momentum,
            epsilon,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.ncols()
    }
}

impl Layer for BatchNorm {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, input: &Batch, ctx: &mut Context) -> Result<Batch> {
        let (b, t, c) = input.data.dim();
        if c != self.channels() {
            return Err(shape_err("batchnorm", format!("{} channels", self.channels()), c.to_string()));
        }
        let x = input.data.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let valid: Vec<bool> = input.mask.iter().copied().collect();
        let count = valid.iter().filter(|&&m| m).count();

        let (mean, var) = if ctx.training {
            if count < 2 {
                return Err(NnError::DegenerateBatch(count));
            }
            let mut mean = vec![0.0; c];
            for (row, _) in xs.chunks_exact(c).zip(&valid).filter(|(_, &v)| v) {
                for (m, &v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= count as f64);
            let mut var = vec![0.0; c];
            for (row, _) in xs.chunks_exact(c).zip(&valid).filter(|(_, &v)| v) {
                for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s /= count as f64);
            let m = self.momentum;
            for ci in 0..c {
                let rm = &mut self.running_mean.value[[0, ci]];
                *rm = m * *rm + (1.0 - m) * mean[ci];
                let rv = &mut self.running_var.value[[0, ci]];
                *rv = m * *rv + (1.0 - m) * var[ci];
            }
            (mean, var)
        } else {
            (
                self.running_mean.value.row(0).to_vec(),
                self.running_var.value.row(0).to_vec(),
            )
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect();
        let gamma = self.gamma.value.row(0).to_vec();
        let beta = self.beta.value.row(0).to_vec();

        let mut xhat = vec![0.0; b * t * c];
        let mut out = vec![0.0; b * t * c];
        for (((row, h), o), _) in xs
            .chunks_exact(c)
            .zip(xhat.chunks_exact_mut(c))
            .zip(out.chunks_exact_mut(c))
            .zip(&valid)
            .filter(|(_, &v)| v)
        {
            for ci in 0..c {
                let n = (row[ci] - mean[ci]) * inv_std[ci];
                h[ci] = n;
                o[ci] = gamma[ci] * n + beta[ci];
            }
        }
        self.cache = Some(BnCache {
            xhat: Array3::from_shape_vec((b, t, c), xhat).expect("shape"),
            inv_std: Array1::from(inv_std),
            valid,
            count,
            training: ctx.training,
        });
        Ok(Batch {
            data: Array3::from_shape_vec((b, t, c), out).expect("shape"),
            mask: input.mask.clone(),
        })
    }

    fn backward(&mut self, grad: &Array3<f64>) -> Array3<f64> {
        let cache = self.cache.as_ref().expect("batchnorm backward before forward");
        let (b, t, c) = grad.dim();
        let g = grad.as_standard_layout();
        let gs = g.as_slice().expect("standard layout");
        let xhat = cache.xhat.as_slice().expect("standard layout");

        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        for ((grow, hrow), _) in gs
            .chunks_exact(c)
            .zip(xhat.chunks_exact(c))
            .zip(&cache.valid)
            .filter(|(_, &v)| v)
        {
            for ci in 0..c {
                sum_dy[ci] += grow[ci];
                sum_dy_xhat[ci] += grow[ci] * hrow[ci];
            }
        }
        for ci in 0..c {
            self.gamma.grad[[0, ci]] += sum_dy_xhat[ci];
            self.beta.grad[[0, ci]] += sum_dy[ci];
        }

        let n = cache.count as f64;
        let scale: Vec<f64> = (0..c)
            .map(|ci| self.gamma.value[[0, ci]] * cache.inv_std[ci])
            .collect();
        let mut dx = vec![0.0; b * t * c];
        for (((d, grow), hrow), _) in dx
            .chunks_exact_mut(c)
            .zip(gs.chunks_exact(c))
            .zip(xhat.chunks_exact(c))
            .zip(&cache.valid)
            .filter(|(_, &v)| v)
        {
            for ci in 0..c {
                d[ci] = if cache.training {
                    // dxhat = gamma * g; the sums above are gamma-free.
                    scale[ci] / n * (n * grow[ci] - sum_dy[ci] - hrow[ci] * sum_dy_xhat[ci])
                } else {
                    scale[ci] * grow[ci]
                };
            }
        }
        Array3::from_shape_vec((b, t, c), dx).expect("shape")
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta, &self.running_mean, &self.running_var]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.gamma,
            &mut self.beta,
            &mut self.running_mean,
            &mut self.running_var,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::s;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(b: usize, t: usize, c: usize) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        Batch::unmasked(Array3::from_shape_fn((b, t, c), |(_, _, k)| {
            rng.random_range(-1.0..1.0) * (k + 1) as f64 + k as f64 * 5.0
        }))
    }

    #[test]
    fn training_output_is_standardized() {
        let mut bn = BatchNorm::new("bn", 3);
        let y = bn.forward(&random(4, 25, 3), &mut Context::training(0)).unwrap();
        for c in 0..3 {
            let col = y.data.slice(s![.., .., c]);
            let n = col.len() as f64;
            let mean = col.sum() / n;
            let var = col.mapv(|v| (v - mean).powi(2)).sum() / n;
            assert!(mean.abs() < 1e-6, "mean {mean}");
            // epsilon shrinks the variance slightly below one
            assert!((var - 1.0).abs() < 1e-4, "var {var}");
        }
    }

    #[test]
    fn standardized_input_passes_through() {
        let mut bn = BatchNorm::with_options("bn", 1, 0.99, 0.0);
        let data = Array3::from_shape_vec((2, 2, 1), vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let y = bn.forward(&Batch::unmasked(data.clone()), &mut Context::training(0)).unwrap();
        assert!(y.data.iter().zip(&data).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn running_statistics_drive_inference() {
        let mut bn = BatchNorm::with_options("bn", 1, 0.0, 0.0);
        let data = Array3::from_shape_vec((2, 2, 1), vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        bn.forward(&Batch::unmasked(data), &mut Context::training(0)).unwrap();
        assert_eq!(bn.running_mean.value[[0, 0]], 4.0);
        assert_eq!(bn.running_var.value[[0, 0]], 5.0);
        let probe = Batch::unmasked(Array3::from_elem((1, 1, 1), 4.0 + 5f64.sqrt()));
        let y = bn.forward(&probe, &mut Context::inference()).unwrap();
        assert!((y.data[[0, 0, 0]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_value_batch_is_degenerate() {
        let mut bn = BatchNorm::new("bn", 2);
        let x = Batch::unmasked(Array3::zeros((1, 1, 2)));
        assert!(matches!(
            bn.forward(&x, &mut Context::training(0)),
            Err(NnError::DegenerateBatch(_))
        ));
        assert!(bn.forward(&x, &mut Context::inference()).is_ok());
    }

    #[test]
    fn masked_positions_do_not_move_statistics() {
        let mut bn = BatchNorm::new("bn", 1);
        let mut x = random(2, 6, 1);
        let full = bn.forward(&x, &mut Context::training(0)).unwrap();
        x.data[[1, 5, 0]] = 1e6;
        x.mask[[1, 5]] = false;
        let mut bn2 = BatchNorm::new("bn", 1);
        let y = bn2.forward(&x, &mut Context::training(0)).unwrap();
        assert_eq!(y.data[[1, 5, 0]], 0.0);
        assert_ne!(full.data[[0, 0, 0]], y.data[[0, 0, 0]]);
        let vals: Vec<f64> = y.data.iter().copied().take(11).collect();
        let mean = vals.iter().sum::<f64>() / 11.0;
        assert!(mean.abs() < 1e-9);
    }
}
