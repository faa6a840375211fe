use ndarray::{s, Array3, Axis};
use rand::Rng;

use super::{BatchNorm, Context, Conv1d, Layer, MaxPool1d, Relu};
use crate::error::{shape_err, Result};
use crate::param::Param;
use crate::tensor::{zero_masked, Batch};

/// Layers applied one after another.
pub struct Sequential {
    name: String,
    pub layers: Vec<Box<dyn Layer>>,
}

impl Sequential {
    pub fn new(name: impl Into<String>, layers: Vec<Box<dyn Layer>>) -> Self {
        Self {
            name: name.into(),
            layers,
        }
    }

    /// Conv -> BatchNorm -> ReLU.
    pub fn conv_block<R: Rng + ?Sized>(
        name: &str,
        in_channels: usize,
        filters: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        Self::new(
            name,
            vec![
                Box::new(Conv1d::new(format!("{name}/conv"), in_channels, filters, kernel, true, rng)),
                Box::new(BatchNorm::new(format!("{name}/bn"), filters)),
                Box::new(Relu::new(format!("{name}/relu"))),
            ],
        )
    }
}

impl Layer for Sequential {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, input: &Batch, ctx: &mut Context) -> Result<Batch> {
        let mut iter = self.layers.iter_mut();
        let Some(first) = iter.next() else {
            return Ok(input.clone());
        };
        let mut x = first.forward(input, ctx)?;
        for layer in iter {
            x = layer.forward(&x, ctx)?;
        }
        Ok(x)
    }

    fn backward(&mut self, grad: &Array3<f64>) -> Array3<f64> {
        let mut g = grad.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g);
        }
        g
    }

    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

/// `ReLU(body(x) + shortcut(x))`, with the identity as shortcut when none is given.
pub struct Residual {
    name: String,
    pub body: Sequential,
    pub shortcut: Option<Sequential>,
    active: Option<Array3<bool>>,
}

impl Residual {
    pub fn new(name: impl Into<String>, body: Sequential, shortcut: Option<Sequential>) -> Self {
        Self {
            name: name.into(),
            body,
            shortcut,
            active: None,
        }
    }
}

impl Layer for Residual {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, input: &Batch, ctx: &mut Context) -> Result<Batch> {
        let h = self.body.forward(input, ctx)?;
        let skip = match &mut self.shortcut {
            Some(s) => s.forward(input, ctx)?.data,
            None => input.data.clone(),
        };
        if skip.dim() != h.data.dim() {
            return Err(shape_err(
                "residual",
                format!("{:?}", h.data.dim()),
                format!("{:?}", skip.dim()),
            ));
        }
        let mut y = h.data + skip;
        zero_masked(&mut y, &input.mask);
        self.active = Some(y.mapv(|v| v > 0.0));
        y.mapv_inplace(|v| v.max(0.0));
        Ok(Batch {
            data: y,
            mask: input.mask.clone(),
        })
    }

    fn backward(&mut self, grad: &Array3<f64>) -> Array3<f64> {
        let active = self.active.as_ref().expect("residual backward before forward");
        let mut g = grad.clone();
        ndarray::Zip::from(&mut g).and(active).for_each(|v, &a| {
            if !a {
                *v = 0.0;
            }
        });
        let mut dx = self.body.backward(&g);
        match &mut self.shortcut {
            Some(s) => dx += &s.backward(&g),
            None => dx += &g,
        }
        dx
    }

    fn params(&self) -> Vec<&Param> {
        let mut v = self.body.params();
        if let Some(s) = &self.shortcut {
            v.extend(s.params());
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.body.params_mut();
        if let Some(s) = &mut self.shortcut {
            v.extend(s.params_mut());
        }
        v
    }
}

/// One Inception module: a bottleneck convolution feeding parallel
/// convolutions of several lengths, plus a max-pool -> 1x1 convolution branch
/// on the module input. Branch outputs are concatenated, then BatchNorm and ReLU.
pub struct InceptionModule {
    name: String,
    bottleneck: Conv1d,
    convs: Vec<Conv1d>,
    pool: MaxPool1d,
    pool_conv: Conv1d,
    bn: BatchNorm,
    relu: Relu,
    branch_filters: usize,
}

impl InceptionModule {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_channels: usize,
        bottleneck: usize,
        branch_filters: usize,
        kernels: &[usize],
        pool_window: usize,
        rng: &mut R,
    ) -> Self {
        let convs = kernels
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                Conv1d::new(format!("{name}/conv_{}", i + 1), bottleneck, branch_filters, k, false, rng)
            })
            .collect();
        let out = branch_filters * (kernels.len() + 1);
        Self {
            bottleneck: Conv1d::new(format!("{name}/bottleneck"), in_channels, bottleneck, 1, false, rng),
            convs,
            pool: MaxPool1d::same(format!("{name}/pool"), pool_window),
            pool_conv: Conv1d::new(format!("{name}/pool_conv"), in_channels, branch_filters, 1, false, rng),
            bn: BatchNorm::new(format!("{name}/bn"), out),
            relu: Relu::new(format!("{name}/relu")),
            name: name.to_string(),
            branch_filters,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.branch_filters * (self.convs.len() + 1)
    }
}

impl Layer for InceptionModule {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, input: &Batch, ctx: &mut Context) -> Result<Batch> {
        let bottleneck = self.bottleneck.forward(input, ctx)?;
        let mut outs = Vec::with_capacity(self.convs.len() + 1);
        for conv in &mut self.convs {
            outs.push(conv.forward(&bottleneck, ctx)?.data);
        }
        let pooled = self.pool.forward(input, ctx)?;
        outs.push(self.pool_conv.forward(&pooled, ctx)?.data);
        let views: Vec<_> = outs.iter().map(|a| a.view()).collect();
        let cat = ndarray::concatenate(Axis(2), &views).expect("same shape");
        let y = self.bn.forward(
            &Batch {
                data: cat,
                mask: input.mask.clone(),
            },
            ctx,
        )?;
        self.relu.forward(&y, ctx)
    }

    fn backward(&mut self, grad: &Array3<f64>) -> Array3<f64> {
        let g = self.relu.backward(grad);
        let g = self.bn.backward(&g);
        let f = self.branch_filters;
        let mut dbottleneck: Option<Array3<f64>> = None;
        for (i, conv) in self.convs.iter_mut().enumerate() {
            let gi = g.slice(s![.., .., i * f..(i + 1) * f]).to_owned();
            let d = conv.backward(&gi);
            match &mut dbottleneck {
                Some(acc) => *acc += &d,
                None => dbottleneck = Some(d),
            }
        }
        let n = self.convs.len();
        let gp = g.slice(s![.., .., n * f..(n + 1) * f]).to_owned();
        let dpooled = self.pool_conv.backward(&gp);
        let mut dx = self.pool.backward(&dpooled);
        if let Some(db) = dbottleneck {
            dx += &self.bottleneck.backward(&db);
        }
        dx
    }

    fn params(&self) -> Vec<&Param> {
        let mut v = self.bottleneck.params();
        for c in &self.convs {
            v.extend(c.params());
        }
        v.extend(self.pool_conv.params());
        v.extend(self.bn.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.bottleneck.params_mut();
        for c in &mut self.convs {
            v.extend(c.params_mut());
        }
        v.extend(self.pool_conv.params_mut());
        v.extend(self.bn.params_mut());
        v
    }
}
