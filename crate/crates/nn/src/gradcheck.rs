//! Central finite-difference gradient checks.
//!
//! Used by the test suites; exposed publicly so downstream crates can check
//! whole models too.

use ndarray::Array3;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::layers::{Context, Layer};
use crate::loss::weighted_mse;
use crate::model::Model;
use crate::param::Param;
use crate::tensor::Batch;
use ndarray::Array1;

/// Denominator floor of the relative error. Gradients smaller than this are
/// effectively compared on absolute error.
pub const REL_FLOOR: f64 = 1e-5;

/// Successive step estimates disagreeing by more than this mark a
/// non-smooth interval (a ReLU or max-pool kink inside `[x - h, x + h]`).
const SMOOTHNESS_TOL: f64 = 1e-4;

/// Step refinements tried per entry.
const MAX_REFINEMENTS: usize = 2;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Entries sampled per parameter array; `usize::MAX` checks all of them.
    pub entries_per_param: usize,
    pub training: bool,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            entries_per_param: usize::MAX,
            training: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub worst: String,
    pub checked: usize,
    /// Entries whose step was refined because of a kink.
    pub refined: usize,
}

impl GradReport {
    fn record(&mut self, what: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        let err = rel_error(analytic, numeric);
        self.checked += 1;
        if err > self.max_rel_error {
            self.max_rel_error = err;
            self.worst = format!("{} (analytic {analytic:e}, numeric {numeric:e})", what());
        }
    }
}

pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(REL_FLOOR)
}

trait Probe {
    fn loss(&mut self, x: &Batch, ctx: &mut Context) -> Result<f64>;
    fn params_mut(&mut self) -> Vec<&mut Param>;
}

struct LayerProbe<'a> {
    layer: &'a mut dyn Layer,
    proj: Array3<f64>,
}

impl Probe for LayerProbe<'_> {
    fn loss(&mut self, x: &Batch, ctx: &mut Context) -> Result<f64> {
        let y = self.layer.forward(x, ctx)?;
        Ok((&y.data * &self.proj).sum())
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layer.params_mut()
    }
}

struct ModelProbe<'a> {
    model: &'a mut Model,
    targets: &'a Array1<f64>,
    weights: &'a Array1<f64>,
}

impl Probe for ModelProbe<'_> {
    fn loss(&mut self, x: &Batch, ctx: &mut Context) -> Result<f64> {
        let pred = self.model.forward(x, ctx)?;
        let (l, _) = weighted_mse(pred.view(), self.targets.view(), self.weights.view())?;
        Ok(l + self.model.regularization_penalty())
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.model.params_mut()
    }
}

fn numeric<P: Probe>(probe: &mut P, x: &Batch, opts: &GradCheckOptions) -> Result<f64> {
    let mut ctx = if opts.training {
        Context::training(opts.seed)
    } else {
        Context::inference()
    };
    probe.loss(x, &mut ctx)
}

fn pick(len: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if k >= len {
        (0..len).collect()
    } else {
        sample(rng, len, k).into_vec()
    }
}

fn compare<P: Probe>(
    probe: &mut P,
    x: &Batch,
    analytic_input: &Array3<f64>,
    analytic_params: Vec<(String, Vec<f64>)>,
    opts: &GradCheckOptions,
) -> Result<GradReport> {
    let h = opts.step;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37_79b9);
    let mut report = GradReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
        refined: 0,
    };
    for (pi, (name, grad)) in analytic_params.iter().enumerate() {
        for i in pick(grad.len(), opts.entries_per_param, &mut rng) {
            let orig = probe.params_mut()[pi].value.as_slice().expect("contiguous")[i];
            let (est, refined) = smooth_estimate(grad[i], h, |d| {
                set(probe, pi, i, orig + d);
                let v = numeric(probe, x, opts);
                set(probe, pi, i, orig);
                v
            })?;
            report.refined += usize::from(refined);
            report.record(|| format!("{name}[{i}]"), grad[i], est);
        }
    }
    let mut xp = x.clone();
    let n = x.data.len();
    for i in pick(n, opts.entries_per_param, &mut rng) {
        let orig = x.data.as_slice().expect("contiguous")[i];
        let a = analytic_input.as_slice().expect("contiguous")[i];
        let (est, refined) = smooth_estimate(a, h, |d| {
            xp.data.as_slice_mut().expect("contiguous")[i] = orig + d;
            let v = numeric(probe, &xp, opts);
            xp.data.as_slice_mut().expect("contiguous")[i] = orig;
            v
        })?;
        report.refined += usize::from(refined);
        report.record(|| format!("input[{i}]"), a, est);
    }
    Ok(report)
}

/// Central difference at step `h`. If it misses `analytic` and the estimate
/// at `h / 10` disagrees with it, the loss is not smooth at scale `h` and the
/// finer estimate is used instead, up to [`MAX_REFINEMENTS`] times. A wrong
/// analytic gradient still shows up, since consistent estimates are never
/// replaced.
fn smooth_estimate(analytic: f64, h: f64, mut loss_at: impl FnMut(f64) -> Result<f64>) -> Result<(f64, bool)> {
    let mut central = |h: f64| -> Result<f64> { Ok((loss_at(h)? - loss_at(-h)?) / (2.0 * h)) };
    let mut step = h;
    let mut est = central(step)?;
    let mut refined = false;
    for _ in 0..MAX_REFINEMENTS {
        if rel_error(analytic, est) <= SMOOTHNESS_TOL {
            break;
        }
        let finer = central(step / 10.0)?;
        if rel_error(est, finer) <= SMOOTHNESS_TOL {
            break;
        }
        refined = true;
        step /= 10.0;
        est = finer;
    }
    Ok((est, refined))
}

fn set<P: Probe>(probe: &mut P, pi: usize, i: usize, v: f64) {
    probe.params_mut()[pi].value.as_slice_mut().expect("contiguous")[i] = v;
}

fn trainable_grads(params: Vec<&mut Param>) -> Vec<(String, Vec<f64>)> {
    params
        .into_iter()
        .map(|p| {
            if p.trainable {
                (p.name.clone(), p.grad.iter().copied().collect())
            } else {
                (p.name.clone(), Vec::new())
            }
        })
        .collect()
}

/// Checks a single layer against the scalar loss `sum(proj * output)` with a
/// random projection.
pub fn check_layer(layer: &mut dyn Layer, x: &Batch, opts: &GradCheckOptions) -> Result<GradReport> {
    let mut ctx = if opts.training {
        Context::training(opts.seed)
    } else {
        Context::inference()
    };
    for p in layer.params_mut() {
        p.zero_grad();
    }
    let y = layer.forward(x, &mut ctx)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(17));
    let proj = Array3::from_shape_fn(y.data.dim(), |_| rng.random_range(-1.0..1.0));
    let dx = layer.backward(&proj);
    let grads = trainable_grads(layer.params_mut());
    let mut probe = LayerProbe { layer, proj };
    compare(&mut probe, x, &dx, grads, opts)
}

/// Checks a whole model under weighted MSE plus its regularization penalty.
pub fn check_model(
    model: &mut Model,
    x: &Batch,
    targets: &Array1<f64>,
    weights: &Array1<f64>,
    opts: &GradCheckOptions,
) -> Result<GradReport> {
    let mut ctx = if opts.training {
        Context::training(opts.seed)
    } else {
        Context::inference()
    };
    model.zero_grad();
    let pred = model.forward(x, &mut ctx)?;
    let (_, g) = weighted_mse(pred.view(), targets.view(), weights.view())?;
    let dx = model.backward(&g);
    model.add_regularization_grad();
    let grads = trainable_grads(model.params_mut());
    let mut probe = ModelProbe {
        model,
        targets,
        weights,
    };
    compare(&mut probe, x, &dx, grads, opts)
}
