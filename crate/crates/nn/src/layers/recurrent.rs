//! GRU and LSTM layers with masking and optional reversed processing.
//!
//! GRU uses the "reset-after" formulation with separate input and recurrent
//! bias vectors (bias shape `(2, 3 * units)`), gate order `[z, r, h]`:
//!
//! ```text
//! z  = sigmoid(x Wz + bz + h Uz + cz)
//! r  = sigmoid(x Wr + br + h Ur + cr)
//! n  = tanh(x Wh + bh + r * (h Uh + ch))
//! h' = z * h + (1 - z) * n
//! ```
//!
//! which gives `3 * units * (input + units + 2)` parameters.
//!
//! LSTM uses the standard four-gate cell, gate order `[i, f, g, o]`, one bias
//! vector, `4 * (units * (input + units) + units)` parameters.
//!
//! A masked timestep leaves the state untouched and emits zeros.

use ndarray::{linalg::general_mat_mul, s, Array2, Array3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Context, Layer};
use crate::error::{shape_err, Result};
use crate::init::glorot_uniform;
use crate::param::{Param, Regularizer};
use crate::tensor::Batch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Gru,
    Lstm,
}

impl CellKind {
    pub fn gates(self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }

    /// Trainable parameters of one direction.
    pub fn param_count(self, input: usize, units: usize) -> usize {
        match self {
            CellKind::Gru => 3 * units * (input + units + 2),
            CellKind::Lstm => 4 * (units * (input + units) + units),
        }
    }
}

#[inline]
fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub struct Recurrent {
    name: String,
    kind: CellKind,
    units: usize,
    input_dim: usize,
    reverse: bool,
    return_sequences: bool,
    pub kernel: Param,
    pub recurrent: Param,
    pub bias: Param,
    cache: Option<RecCache>,
}

/// All per-step arrays are time-major: row `t * batch + b`.
struct RecCache {
    batch: usize,
    steps: usize,
    x: Array2<f64>,
    valid: Vec<bool>,
    h_prev: Array2<f64>,
    gates: Array2<f64>,
    // GRU: recurrent candidate term `h Uh + ch`. LSTM: cell state before/after the step.
    aux: Array2<f64>,
    cell: Array2<f64>,
}

impl Recurrent {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        name: impl Into<String>,
        kind: CellKind,
        input_dim: usize,
        units: usize,
        return_sequences: bool,
        reverse: bool,
        kernel_reg: Regularizer,
        recurrent_reg: Regularizer,
        rng: &mut R,
    ) -> Self {
        let name = name.into();
        let g = kind.gates() * units;
        let kernel = glorot_uniform(rng, (input_dim, g), input_dim, g);
        let recurrent = glorot_uniform(rng, (units, g), units, g);
        let bias = match kind {
            CellKind::Gru => Array2::zeros((2, g)),
            CellKind::Lstm => {
                // forget-gate bias starts at one
                let mut b = Array2::zeros((1, g));
                b.slice_mut(s![0, units..2 * units]).fill(1.0);
                b
            }
        };
        Self {
            kernel: Param::new(format!("{name}/kernel"), kernel).with_reg(kernel_reg),
            recurrent: Param::new(format!("{name}/recurrent_kernel"), recurrent).with_reg(recurrent_reg),
            bias: Param::new(format!("{name}/bias"), bias),
            name,
            kind,
            units,
            input_dim,
            reverse,
            return_sequences,
            cache: None,
        }
    }

    pub fn units(&self) -> usize {
        self.units
    }

    pub fn kind(&self) -> CellKind {
        self.kind
    }

    fn order(&self, steps: usize) -> Box<dyn Iterator<Item = usize>> {
        if self.reverse {
            Box::new((0..steps).rev())
        } else {
            Box::new(0..steps)
        }
    }
}

impl Layer for Recurrent {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, input: &Batch, _ctx: &mut Context) -> Result<Batch> {
        let (b, t, c) = input.data.dim();
        if c != self.input_dim {
            return Err(shape_err(
                "recurrent",
                format!("{} input channels", self.input_dim),
                c.to_string(),
            ));
        }
        let u = self.units;
        let g = self.kind.gates() * u;

        let x = input
            .data
            .view()
            .permuted_axes([1, 0, 2])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((t * b, c))
            .expect("contiguous");
        let valid: Vec<bool> = input.mask.t().iter().copied().collect();

        let mut xp = Array2::zeros((t * b, g));
        for mut row in xp.rows_mut() {
            row.assign(&self.bias.value.row(0));
        }
        general_mat_mul(1.0, &x, &self.kernel.value, 1.0, &mut xp);

        let mut h_prev = Array2::zeros((t * b, u));
        let mut gates = Array2::zeros((t * b, g));
        let mut aux = Array2::zeros((t * b, u));
        let mut cell = match self.kind {
            CellKind::Gru => Array2::zeros((0, u)),
            CellKind::Lstm => Array2::zeros((t * b, u)),
        };
        let mut out = Array2::zeros((t * b, u));
        let mut h = Array2::<f64>::zeros((b, u));
        let mut cstate = Array2::<f64>::zeros((b, u));
        let mut hp = Array2::<f64>::zeros((b, g));

        for ti in self.order(t) {
            let r0 = ti * b;
            h_prev.slice_mut(s![r0..r0 + b, ..]).assign(&h);
            match self.kind {
                CellKind::Gru => {
                    for mut row in hp.rows_mut() {
                        row.assign(&self.bias.value.row(1));
                    }
                }
                CellKind::Lstm => hp.fill(0.0),
            }
            general_mat_mul(1.0, &h, &self.recurrent.value, 1.0, &mut hp);

            for bi in 0..b {
                let row = r0 + bi;
                if !valid[row] {
                    continue;
                }
                let xr = xp.row(row);
                let xr = xr.as_slice().expect("row");
                let hr = hp.row(bi);
                let hr = hr.as_slice().expect("row");
                let mut gr = gates.row_mut(row);
                let gr = gr.as_slice_mut().expect("row");
                let mut hs = h.row_mut(bi);
                let hs = hs.as_slice_mut().expect("row");
                match self.kind {
                    CellKind::Gru => {
                        let mut ar = aux.row_mut(row);
                        let ar = ar.as_slice_mut().expect("row");
                        for j in 0..u {
                            let z = sigmoid(xr[j] + hr[j]);
                            let r = sigmoid(xr[u + j] + hr[u + j]);
                            let hh = hr[2 * u + j];
                            let n = (xr[2 * u + j] + r * hh).tanh();
                            gr[j] = z;
                            gr[u + j] = r;
                            gr[2 * u + j] = n;
                            ar[j] = hh;
                            hs[j] = z * hs[j] + (1.0 - z) * n;
                        }
                    }
                    CellKind::Lstm => {
                        let mut ar = aux.row_mut(row);
                        let ar = ar.as_slice_mut().expect("row");
                        let mut cr = cell.row_mut(row);
                        let cr = cr.as_slice_mut().expect("row");
                        let mut cs = cstate.row_mut(bi);
                        let cs = cs.as_slice_mut().expect("row");
                        for j in 0..u {
                            let i = sigmoid(xr[j] + hr[j]);
                            let f = sigmoid(xr[u + j] + hr[u + j]);
                            let gg = (xr[2 * u + j] + hr[2 * u + j]).tanh();
                            let o = sigmoid(xr[3 * u + j] + hr[3 * u + j]);
                            gr[j] = i;
                            gr[u + j] = f;
                            gr[2 * u + j] = gg;
                            gr[3 * u + j] = o;
                            ar[j] = cs[j];
                            let cn = f * cs[j] + i * gg;
                            cr[j] = cn;
                            cs[j] = cn;
                            hs[j] = o * cn.tanh();
                        }
                    }
                }
                out.row_mut(row).assign(&h.row(bi));
            }
        }

        let data = if self.return_sequences {
            out.into_shape_with_order((t, b, u))
                .expect("contiguous")
                .permuted_axes([1, 0, 2])
                .as_standard_layout()
                .into_owned()
        } else {
            h.clone().into_shape_with_order((b, 1, u)).expect("contiguous")
        };
        let mask = if self.return_sequences {
            input.mask.clone()
        } else {
            Array2::from_elem((b, 1), true)
        };
        self.cache = Some(RecCache {
            batch: b,
            steps: t,
            x,
            valid,
            h_prev,
            gates,
            aux,
            cell,
        });
        Ok(Batch { data, mask })
    }

    fn backward(&mut self, grad: &Array3<f64>) -> Array3<f64> {
        let cache = self.cache.take().expect("recurrent backward before forward");
        let (b, t) = (cache.batch, cache.steps);
        let u = self.units;
        let g = self.kind.gates() * u;

        let mut dgx = Array2::<f64>::zeros((t * b, g));
        let mut dgr = match self.kind {
            CellKind::Gru => Array2::<f64>::zeros((t * b, g)),
            CellKind::Lstm => Array2::<f64>::zeros((0, g)),
        };
        let mut dh = Array2::<f64>::zeros((b, u));
        let mut dc = Array2::<f64>::zeros((b, u));
        if !self.return_sequences {
            dh.assign(&grad.slice(s![.., 0, ..]));
        }
        let rec_t = self.recurrent.value.t();

        let order: Vec<usize> = self.order(t).collect();
        for &ti in order.iter().rev() {
            let r0 = ti * b;
            if self.return_sequences {
                for bi in 0..b {
                    if cache.valid[r0 + bi] {
                        let mut d = dh.row_mut(bi);
                        d += &grad.slice(s![bi, ti, ..]);
                    }
                }
            }
            let mut dh_next = dh.clone();
            for bi in 0..b {
                let row = r0 + bi;
                if !cache.valid[row] {
                    continue;
                }
                let gr = cache.gates.row(row);
                let gr = gr.as_slice().expect("row");
                let ar = cache.aux.row(row);
                let ar = ar.as_slice().expect("row");
                let dhr = dh.row(bi);
                let dhr = dhr.as_slice().expect("row");
                let mut dnext = dh_next.row_mut(bi);
                let dnext = dnext.as_slice_mut().expect("row");
                let mut dx_row = dgx.row_mut(row);
                let dx_row = dx_row.as_slice_mut().expect("row");
                match self.kind {
                    CellKind::Gru => {
                        let hp = cache.h_prev.row(row);
                        let hp = hp.as_slice().expect("row");
                        let mut dr_row = dgr.row_mut(row);
                        let dr_row = dr_row.as_slice_mut().expect("row");
                        for j in 0..u {
                            let (z, r, n, hh) = (gr[j], gr[u + j], gr[2 * u + j], ar[j]);
                            let d = dhr[j];
                            let dz = d * (hp[j] - n);
                            let dn = d * (1.0 - z);
                            dnext[j] = d * z;
                            let dn_pre = dn * (1.0 - n * n);
                            let dr_pre = dn_pre * hh * r * (1.0 - r);
                            let dz_pre = dz * z * (1.0 - z);
                            dx_row[j] = dz_pre;
                            dx_row[u + j] = dr_pre;
                            dx_row[2 * u + j] = dn_pre;
                            dr_row[j] = dz_pre;
                            dr_row[u + j] = dr_pre;
                            dr_row[2 * u + j] = dn_pre * r;
                        }
                    }
                    CellKind::Lstm => {
                        let cr = cache.cell.row(row);
                        let cr = cr.as_slice().expect("row");
                        let mut dcr = dc.row_mut(bi);
                        let dcr = dcr.as_slice_mut().expect("row");
                        for j in 0..u {
                            let (i, f, gg, o) = (gr[j], gr[u + j], gr[2 * u + j], gr[3 * u + j]);
                            let c_prev = ar[j];
                            let tc = cr[j].tanh();
                            let d = dhr[j];
                            let d_o = d * tc;
                            let dct = dcr[j] + d * o * (1.0 - tc * tc);
                            dx_row[j] = dct * gg * i * (1.0 - i);
                            dx_row[u + j] = dct * c_prev * f * (1.0 - f);
                            dx_row[2 * u + j] = dct * i * (1.0 - gg * gg);
                            dx_row[3 * u + j] = d_o * o * (1.0 - o);
                            dcr[j] = dct * f;
                            dnext[j] = 0.0;
                        }
                    }
                }
            }
            let drec = match self.kind {
                CellKind::Gru => dgr.slice(s![r0..r0 + b, ..]),
                CellKind::Lstm => dgx.slice(s![r0..r0 + b, ..]),
            };
            general_mat_mul(1.0, &drec, &rec_t, 1.0, &mut dh_next);
            dh = dh_next;
        }

        let drec_all = match self.kind {
            CellKind::Gru => &dgr,
            CellKind::Lstm => &dgx,
        };
        general_mat_mul(1.0, &cache.x.t(), &dgx, 1.0, &mut self.kernel.grad);
        general_mat_mul(1.0, &cache.h_prev.t(), drec_all, 1.0, &mut self.recurrent.grad);
        self.bias
            .grad
            .row_mut(0)
            .scaled_add(1.0, &dgx.sum_axis(Axis(0)));
        if self.kind == CellKind::Gru {
            self.bias
                .grad
                .row_mut(1)
                .scaled_add(1.0, &dgr.sum_axis(Axis(0)));
        }
        let mut dx = Array2::zeros((t * b, self.input_dim));
        general_mat_mul(1.0, &dgx, &self.kernel.value.t(), 0.0, &mut dx);
        let dx = dx
            .into_shape_with_order((t, b, self.input_dim))
            .expect("contiguous")
            .permuted_axes([1, 0, 2])
            .as_standard_layout()
            .into_owned();
        self.cache = Some(cache);
        dx
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.kernel, &self.recurrent, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.kernel, &mut self.recurrent, &mut self.bias]
    }
}

/// Runs one copy of the wrapped layer left-to-right and one right-to-left and
/// concatenates their outputs along channels (`[forward, backward]`).
pub struct Bidirectional {
    name: String,
    pub forward: Recurrent,
    pub backward: Recurrent,
}

impl Bidirectional {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        name: impl Into<String>,
        kind: CellKind,
        input_dim: usize,
        units: usize,
        return_sequences: bool,
        kernel_reg: Regularizer,
        recurrent_reg: Regularizer,
        rng: &mut R,
    ) -> Self {
        let name = name.into();
        let forward = Recurrent::new(
            format!("{name}/forward"),
            kind,
            input_dim,
            units,
            return_sequences,
            false,
            kernel_reg,
            recurrent_reg,
            rng,
        );
        let backward = Recurrent::new(
            format!("{name}/backward"),
            kind,
            input_dim,
            units,
            return_sequences,
            true,
            kernel_reg,
            recurrent_reg,
            rng,
        );
        Self {
            name,
            forward,
            backward,
        }
    }
}

impl Layer for Bidirectional {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, input: &Batch, ctx: &mut Context) -> Result<Batch> {
        let f = self.forward.forward(input, ctx)?;
        let b = self.backward.forward(input, ctx)?;
        let data = ndarray::concatenate(Axis(2), &[f.data.view(), b.data.view()]).expect("same shape");
        Ok(Batch { data, mask: f.mask })
    }

    fn backward(&mut self, grad: &Array3<f64>) -> Array3<f64> {
        let u = self.forward.units();
        let gf = grad.slice(s![.., .., ..u]).to_owned();
        let gb = grad.slice(s![.., .., u..]).to_owned();
        let mut dx = self.forward.backward(&gf);
        dx += &self.backward.backward(&gb);
        dx
    }

    fn params(&self) -> Vec<&Param> {
        let mut v = self.forward.params();
        v.extend(self.backward.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.forward.params_mut();
        v.extend(self.backward.params_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn layer(kind: CellKind, input: usize, units: usize, seq: bool) -> Recurrent {
        Recurrent::new("r", kind, input, units, seq, false, Regularizer::NONE, Regularizer::NONE, &mut rng())
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(CellKind::Gru.param_count(1, 1), 12);
        assert_eq!(layer(CellKind::Gru, 1, 1, false).trainable_count(), 12);
        assert_eq!(layer(CellKind::Gru, 2, 20, true).trainable_count(), 1440);
        assert_eq!(layer(CellKind::Lstm, 2, 20, true).trainable_count(), 1840);
        let bi = Bidirectional::new("b", CellKind::Gru, 2, 20, true, Regularizer::NONE, Regularizer::NONE, &mut rng());
        assert_eq!(bi.trainable_count(), 2 * 1440);
    }

    #[test]
    fn fully_masked_sequence_keeps_initial_state() {
        for kind in [CellKind::Gru, CellKind::Lstm] {
            for seq in [false, true] {
                let mut l = layer(kind, 2, 4, seq);
                l.bias.value.fill(0.3);
                let x = Batch::new(Array3::from_elem((2, 5, 2), 0.8), Array2::from_elem((2, 5), false)).unwrap();
                let y = l.forward(&x, &mut Context::inference()).unwrap();
                assert!(y.data.iter().all(|&v| v == 0.0), "{kind:?}");
            }
        }
    }

    #[test]
    fn lstm_with_zero_input_and_bias_outputs_zero() {
        let mut l = layer(CellKind::Lstm, 3, 4, true);
        l.bias.value.fill(0.0);
        let x = Batch::unmasked(Array3::zeros((2, 6, 3)));
        let y = l.forward(&x, &mut Context::inference()).unwrap();
        assert!(y.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gru_reset_after_single_step_by_hand() {
        let mut l = layer(CellKind::Gru, 1, 1, false);
        // gate order z, r, h
        l.kernel.value = Array2::from_shape_vec((1, 3), vec![0.5, -0.3, 0.8]).unwrap();
        l.recurrent.value = Array2::from_shape_vec((1, 3), vec![0.2, 0.4, -0.6]).unwrap();
        l.bias.value = Array2::from_shape_vec((2, 3), vec![0.1, 0.0, 0.05, -0.1, 0.2, 0.3]).unwrap();
        let x = Batch::unmasked(Array3::from_shape_vec((1, 2, 1), vec![1.0, -2.0]).unwrap());
        let y = l.forward(&x, &mut Context::inference()).unwrap();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut h = 0.0f64;
        for xv in [1.0, -2.0] {
            let z = sig(0.5 * xv + 0.1 + 0.2 * h - 0.1);
            let r = sig(-0.3 * xv + 0.0 + 0.4 * h + 0.2);
            let n = (0.8 * xv + 0.05 + r * (-0.6 * h + 0.3)).tanh();
            h = z * h + (1.0 - z) * n;
        }
        assert!((y.data[[0, 0, 0]] - h).abs() < 1e-14);
    }

    #[test]
    fn palindrome_gives_equal_directions() {
        for kind in [CellKind::Gru, CellKind::Lstm] {
            let mut bi =
                Bidirectional::new("b", kind, 2, 3, false, Regularizer::NONE, Regularizer::NONE, &mut rng());
            bi.backward.kernel.value = bi.forward.kernel.value.clone();
            bi.backward.recurrent.value = bi.forward.recurrent.value.clone();
            bi.backward.bias.value = bi.forward.bias.value.clone();
            let vals = [0.3, -0.2, 0.9, 0.1, -0.5, 0.4, 0.9, 0.1, 0.3, -0.2];
            let mut data = Array3::zeros((1, 5, 2));
            for t in 0..5 {
                let src = if t < 3 { t } else { 4 - t };
                data[[0, t, 0]] = vals[2 * src];
                data[[0, t, 1]] = vals[2 * src + 1];
            }
            let y = bi.forward(&Batch::unmasked(data), &mut Context::inference()).unwrap();
            for u in 0..3 {
                assert!((y.data[[0, 0, u]] - y.data[[0, 0, 3 + u]]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn reverse_direction_starts_at_last_valid_step() {
        let mut bi = Bidirectional::new("b", CellKind::Gru, 1, 2, true, Regularizer::NONE, Regularizer::NONE, &mut rng());
        let full = Array3::from_shape_vec((1, 3, 1), vec![0.5, -1.0, 0.7]).unwrap();
        let y_short = bi.forward(&Batch::unmasked(full.clone()), &mut Context::inference()).unwrap();
        let mut padded = Array3::from_elem((1, 5, 1), -1.0);
        padded.slice_mut(s![.., ..3, ..]).assign(&full);
        let mask = Array2::from_shape_vec((1, 5), vec![true, true, true, false, false]).unwrap();
        let y_pad = bi.forward(&Batch::new(padded, mask).unwrap(), &mut Context::inference()).unwrap();
        assert_eq!(y_pad.data.slice(s![.., ..3, ..]), y_short.data);
        assert!(y_pad.data.slice(s![.., 3.., ..]).iter().all(|&v| v == 0.0));
    }
}
