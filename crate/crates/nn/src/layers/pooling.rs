use ndarray::{s, Array2, Array3};

use super::{Context, Layer};
use crate::error::{shape_err, Result};
use crate::tensor::Batch;

/// Mean over valid timesteps: `(batch, time, ch) -> (batch, 1, ch)`.
/// A sample with no valid step pools to zero.
pub struct GlobalAvgPool {
    name: String,
    cache: Option<(Array2<bool>, Vec<usize>)>,
}

impl GlobalAvgPool {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            cache: None,
        }
    }
}

impl Layer for GlobalAvgPool {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, input: &Batch, _ctx: &mut Context) -> Result<Batch> {
        let (b, t, c) = input.data.dim();
        let counts = input.valid_lengths();
        let mut out = Array3::zeros((b, 1, c));
        for bi in 0..b {
            if counts[bi] == 0 {
                continue;
            }
            let mut acc = out.slice_mut(s![bi, 0, ..]);
            for ti in 0..t {
                if input.mask[[bi, ti]] {
                    acc += &input.data.slice(s![bi, ti, ..]);
                }
            }
            acc /= counts[bi] as f64;
        }
        self.cache = Some((input.mask.clone(), counts));
        Ok(Batch {
            data: out,
            mask: Array2::from_elem((b, 1), true),
        })
    }

    fn backward(&mut self, grad: &Array3<f64>) -> Array3<f64> {
        let (mask, counts) = self.cache.as_ref().expect("pool backward before forward");
        let (b, t) = mask.dim();
        let c = grad.dim().2;
        let mut dx = Array3::zeros((b, t, c));
        for bi in 0..b {
            if counts[bi] == 0 {
                continue;
            }
            let g = grad.slice(s![bi, 0, ..]).mapv(|v| v / counts[bi] as f64);
            for ti in 0..t {
                if mask[[bi, ti]] {
                    dx.slice_mut(s![bi, ti, ..]).assign(&g);
                }
            }
        }
        dx
    }
}

/// 1-D max pooling.
///
/// `valid` mode (the default) emits `floor((T - window) / stride) + 1` steps;
/// an output step is valid only when its whole window is valid, so a padded
/// batch pools to the same valid prefix as the unpadded one.
///
/// `same` mode requires stride 1 and keeps the length, taking the max over the
/// valid neighbours of each valid position.
pub struct MaxPool1d {
    name: String,
    window: usize,
    stride: usize,
    same: bool,
    cache: Option<PoolCache>,
}

struct PoolCache {
    in_shape: (usize, usize, usize),
    // flat index into the input for every output element, or usize::MAX when masked
    argmax: Array3<usize>,
}

impl MaxPool1d {
    pub fn valid(name: impl Into<String>, window: usize, stride: usize) -> Self {
        assert!(window >= 1 && stride >= 1);
        Self {
            name: name.into(),
            window,
            stride,
            same: false,
            cache: None,
        }
    }

    pub fn same(name: impl Into<String>, window: usize) -> Self {
        assert!(window >= 1);
        Self {
            name: name.into(),
            window,
            stride: 1,
            same: true,
            cache: None,
        }
    }

    pub fn output_len(&self, t: usize) -> usize {
        if self.same {
            t
        } else if t < self.window {
            0
        } else {
            (t - self.window) / self.stride + 1
        }
    }
}

impl Layer for MaxPool1d {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, input: &Batch, _ctx: &mut Context) -> Result<Batch> {
        let (b, t, c) = input.data.dim();
        let to = self.output_len(t);
        if to == 0 {
            return Err(shape_err(
                "max_pool1d",
                format!("at least {} timesteps", self.window),
                t.to_string(),
            ));
        }
        let mut out = Array3::zeros((b, to, c));
        let mut argmax = Array3::from_elem((b, to, c), usize::MAX);
        let mut mask = Array2::from_elem((b, to), false);
        let left = (self.window - 1) / 2;
        for bi in 0..b {
            for oi in 0..to {
                let (lo, hi) = if self.same {
                    if !input.mask[[bi, oi]] {
                        continue;
                    }
                    (oi.saturating_sub(left), (oi + self.window - left).min(t))
                } else {
                    let lo = oi * self.stride;
                    let hi = lo + self.window;
                    if !(lo..hi).all(|ti| input.mask[[bi, ti]]) {
                        continue;
                    }
                    (lo, hi)
                };
                mask[[bi, oi]] = true;
                for ci in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_t = usize::MAX;
                    for ti in lo..hi {
                        if input.mask[[bi, ti]] && input.data[[bi, ti, ci]] > best {
                            best = input.data[[bi, ti, ci]];
                            best_t = ti;
                        }
                    }
                    out[[bi, oi, ci]] = best;
                    argmax[[bi, oi, ci]] = (bi * t + best_t) * c + ci;
                }
            }
        }
        self.cache = Some(PoolCache {
            in_shape: (b, t, c),
            argmax,
        });
        Ok(Batch { data: out, mask })
    }

    fn backward(&mut self, grad: &Array3<f64>) -> Array3<f64> {
        let cache = self.cache.as_ref().expect("max pool backward before forward");
        let mut dx = Array3::<f64>::zeros(cache.in_shape);
        let flat = dx.as_slice_mut().expect("standard layout");
        for (&idx, &g) in cache.argmax.iter().zip(grad.iter()) {
            if idx != usize::MAX {
                flat[idx] += g;
            }
        }
        dx
    }
}
