use ndarray::{linalg::general_mat_mul, s, Array2, Array3, Axis};
use rand::Rng;

use super::{Context, Layer};
use crate::error::{shape_err, Result};
use crate::init::glorot_uniform;
use crate::param::Param;
use crate::tensor::Batch;

/// 1-D convolution, stride 1, "same" padding.
///
/// For even kernels the extra padding goes on the right, so output position
/// `t` sees inputs `t - (k-1)/2 ..= t + k/2`. Masked input positions read as
/// zero and masked output positions are zeroed, which makes a padded batch
/// produce the same valid outputs as the unpadded one.
///
/// The kernel is stored as `(k * in, out)`: rows `j*in .. (j+1)*in` hold tap `j`.
pub struct Conv1d {
    name: String,
    kernel_size: usize,
    in_channels: usize,
    pub weight: Param,
    pub bias: Option<Param>,
    cache: Option<ConvCache>,
}

struct ConvCache {
    padded: Array2<f64>,
    mask: Array2<bool>,
    batch: usize,
    steps: usize,
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(
        name: impl Into<String>,
        in_channels: usize,
        filters: usize,
        kernel_size: usize,
        use_bias: bool,
        rng: &mut R,
    ) -> Self {
        assert!(kernel_size >= 1, "kernel size must be positive");
        let name = name.into();
        let w = glorot_uniform(
            rng,
            (kernel_size * in_channels, filters),
            kernel_size * in_channels,
            kernel_size * filters,
        );
        let bias = use_bias.then(|| Param::new(format!("{name}/bias"), Array2::zeros((1, filters))));
        Self {
            weight: Param::new(format!("{name}/kernel"), w),
            bias,
            name,
            kernel_size,
            in_channels,
            cache: None,
        }
    }

    pub fn filters(&self) -> usize {
        self.weight.value.ncols()
    }

    fn left_pad(&self) -> usize {
        (self.kernel_size - 1) / 2
    }
}

impl Layer for Conv1d {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, input: &Batch, _ctx: &mut Context) -> Result<Batch> {
        let (b, t, c) = input.data.dim();
        if c != self.in_channels {
            return Err(shape_err(
                "conv1d",
                format!("{} input channels", self.in_channels),
                c.to_string(),
            ));
        }
        let k = self.kernel_size;
        let pl = self.left_pad();
        let tp = t + k - 1;
        let f = self.filters();

        let mut padded = Array2::zeros((b * tp, c));
        for bi in 0..b {
            for ti in 0..t {
                if input.mask[[bi, ti]] {
                    padded
                        .row_mut(bi * tp + pl + ti)
                        .assign(&input.data.slice(s![bi, ti, ..]));
                }
            }
        }

        let rows = b * tp - (k - 1);
        let mut full = Array2::zeros((rows, f));
        for j in 0..k {
            let xs = padded.slice(s![j..j + rows, ..]);
            let wj = self.weight.value.slice(s![j * c..(j + 1) * c, ..]);
            general_mat_mul(1.0, &xs, &wj, 1.0, &mut full);
        }

        let mut out = Array3::zeros((b, t, f));
        for bi in 0..b {
            for ti in 0..t {
                if input.mask[[bi, ti]] {
                    let mut o = out.slice_mut(s![bi, ti, ..]);
                    o.assign(&full.row(bi * tp + ti));
                    if let Some(bias) = &self.bias {
                        o += &bias.value.row(0);
                    }
                }
            }
        }
        self.cache = Some(ConvCache {
            padded,
            mask: input.mask.clone(),
            batch: b,
            steps: t,
        });
        Ok(Batch {
            data: out,
            mask: input.mask.clone(),
        })
    }

    fn backward(&mut self, grad: &Array3<f64>) -> Array3<f64> {
        let cache = self.cache.as_ref().expect("conv1d backward before forward");
        let (b, t) = (cache.batch, cache.steps);
        let k = self.kernel_size;
        let c = self.in_channels;
        let pl = self.left_pad();
        let tp = t + k - 1;
        let f = self.filters();
        let rows = b * tp - (k - 1);

        let mut dfull = Array2::zeros((rows, f));
        for bi in 0..b {
            for ti in 0..t {
                if cache.mask[[bi, ti]] {
                    dfull.row_mut(bi * tp + ti).assign(&grad.slice(s![bi, ti, ..]));
                }
            }
        }
        if let Some(bias) = &mut self.bias {
            bias.grad.row_mut(0).scaled_add(1.0, &dfull.sum_axis(Axis(0)));
        }

        let mut dpadded = Array2::zeros((b * tp, c));
        for j in 0..k {
            let xs = cache.padded.slice(s![j..j + rows, ..]);
            let mut dw = self.weight.grad.slice_mut(s![j * c..(j + 1) * c, ..]);
            general_mat_mul(1.0, &xs.t(), &dfull, 1.0, &mut dw);
            let wj = self.weight.value.slice(s![j * c..(j + 1) * c, ..]);
            let mut dxs = dpadded.slice_mut(s![j..j + rows, ..]);
            general_mat_mul(1.0, &dfull, &wj.t(), 1.0, &mut dxs);
        }

        let mut dx = Array3::zeros((b, t, c));
        for bi in 0..b {
            for ti in 0..t {
                if cache.mask[[bi, ti]] {
                    dx.slice_mut(s![bi, ti, ..])
                        .assign(&dpadded.row(bi * tp + pl + ti));
                }
            }
        }
        dx
    }

    fn params(&self) -> Vec<&Param> {
        let mut v = vec![&self.weight];
        v.extend(self.bias.as_ref());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![&mut self.weight];
        v.extend(self.bias.as_mut());
        v
    }
}
