use ndarray::{Array1, Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, NnError, Result};
use crate::layers::{
    BatchNorm, Bidirectional, Context, Conv1d, Dense, Dropout, GlobalAvgPool, InceptionModule, Layer,
    MaxPool1d, Recurrent, Relu, Residual, Sequential,
};
use crate::loss::{add_regularization_grad, regularization_penalty};
use crate::param::Param;
use crate::spec::{LayerSpec, ModelSpec};
use crate::tensor::Batch;

/// Trainable-parameter count of one top-level layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSummary {
    pub name: String,
    pub params: usize,
}

/// A network instantiated from a [`ModelSpec`].
pub struct Model {
    spec: ModelSpec,
    layers: Vec<Box<dyn Layer>>,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("kind", &self.spec.kind)
            .field("layers", &self.summary())
            .finish()
    }
}

#[derive(Default)]
struct Namer(std::collections::HashMap<&'static str, usize>);

impl Namer {
    fn next(&mut self, base: &'static str) -> String {
        let n = self.0.entry(base).or_insert(0);
        *n += 1;
        format!("{base}_{n}")
    }
}

fn conv_bn(name: &str, cin: usize, filters: usize, kernel: usize, relu: bool, rng: &mut ChaCha8Rng) -> Vec<Box<dyn Layer>> {
    let mut v: Vec<Box<dyn Layer>> = vec![
        Box::new(Conv1d::new(format!("{name}/conv"), cin, filters, kernel, true, rng)),
        Box::new(BatchNorm::new(format!("{name}/bn"), filters)),
    ];
    if relu {
        v.push(Box::new(Relu::new(format!("{name}/relu"))));
    }
    v
}

fn projection(name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Option<Sequential> {
    (cin != cout).then(|| Sequential::new(format!("{name}/shortcut"), conv_bn(&format!("{name}/shortcut"), cin, cout, 1, false, rng)))
}

impl Model {
    /// Instantiates `spec` with parameters drawn from `seed`.
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut namer = Namer::default();
        let mut channels = spec.input_channels;
        let mut layers: Vec<Box<dyn Layer>> = Vec::with_capacity(spec.layers.len());
        for ls in &spec.layers {
            let layer: Box<dyn Layer> = match ls {
                LayerSpec::ConvBlock { filters, kernel } => {
                    let name = namer.next("conv_block");
                    Box::new(Sequential::conv_block(&name, channels, *filters, *kernel, &mut rng))
                }
                LayerSpec::ResidualBlock { filters, kernels } => {
                    let name = namer.next("residual_block");
                    let mut body = Vec::new();
                    let mut cin = channels;
                    for (i, (&f, &k)) in filters.iter().zip(kernels).enumerate() {
                        let last = i + 1 == filters.len();
                        body.extend(conv_bn(&format!("{name}/unit_{}", i + 1), cin, f, k, !last, &mut rng));
                        cin = f;
                    }
                    let shortcut = projection(&name, channels, cin, &mut rng);
                    Box::new(Residual::new(name.clone(), Sequential::new(format!("{name}/body"), body), shortcut))
                }
                LayerSpec::InceptionBlock {
                    modules,
                    bottleneck,
                    filters,
                    kernels,
                    pool,
                } => {
                    let name = namer.next("inception_block");
                    let mut body: Vec<Box<dyn Layer>> = Vec::new();
                    let mut cin = channels;
                    for i in 0..*modules {
                        let m = InceptionModule::new(
                            &format!("{name}/module_{}", i + 1),
                            cin,
                            *bottleneck,
                            *filters,
                            kernels,
                            *pool,
                            &mut rng,
                        );
                        cin = m.out_channels();
                        body.push(Box::new(m));
                    }
                    let shortcut = projection(&name, channels, cin, &mut rng);
                    Box::new(Residual::new(name.clone(), Sequential::new(format!("{name}/body"), body), shortcut))
                }
                LayerSpec::MaxPool { window, stride } => {
                    Box::new(MaxPool1d::valid(namer.next("max_pooling1d"), *window, *stride))
                }
                LayerSpec::Recurrent {
                    cell,
                    units,
                    bidirectional,
                    return_sequences,
                    kernel_reg,
                    recurrent_reg,
                } => {
                    if *bidirectional {
                        Box::new(Bidirectional::new(
                            namer.next("bidirectional"),
                            *cell,
                            channels,
                            *units,
                            *return_sequences,
                            *kernel_reg,
                            *recurrent_reg,
                            &mut rng,
                        ))
                    } else {
                        let base = match cell {
                            crate::layers::CellKind::Gru => "gru",
                            crate::layers::CellKind::Lstm => "lstm",
                        };
                        Box::new(Recurrent::new(
                            namer.next(base),
                            *cell,
                            channels,
                            *units,
                            *return_sequences,
                            false,
                            *kernel_reg,
                            *recurrent_reg,
                            &mut rng,
                        ))
                    }
                }
                LayerSpec::Dropout { rate } => Box::new(Dropout::new(namer.next("dropout"), *rate)?),
                LayerSpec::GlobalAveragePool => Box::new(GlobalAvgPool::new(namer.next("global_average_pooling1d"))),
                LayerSpec::Dense { units } => Box::new(Dense::new(
                    namer.next("dense"),
                    channels,
                    *units,
                    Default::default(),
                    &mut rng,
                )),
            };
            channels = ls.out_channels(channels);
            layers.push(layer);
        }
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Box<dyn Layer>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Box<dyn Layer>] {
        &mut self.layers
    }

    /// Runs the network and returns one prediction per sequence.
    pub fn forward(&mut self, input: &Batch, ctx: &mut Context) -> Result<Array1<f64>> {
        if input.channels() != self.spec.input_channels {
            return Err(shape_err(
                "model input channels",
                self.spec.input_channels.to_string(),
                input.channels().to_string(),
            ));
        }
        let mut x = input.clone();
        for layer in &mut self.layers {
            x = layer.forward(&x, ctx)?;
        }
        let (b, t, c) = x.data.dim();
        if t != 1 || c != 1 {
            return Err(NnError::ShapeMismatch {
                context: "model output".into(),
                expected: format!("({b}, 1, 1)"),
                actual: format!("({b}, {t}, {c})"),
            });
        }
        Ok(x.data.into_shape_with_order(b).expect("contiguous output"))
    }

    /// Inference-mode predictions.
    pub fn predict(&mut self, input: &Batch) -> Result<Array1<f64>> {
        self.forward(input, &mut Context::inference())
    }

    /// Back-propagates the gradient of the loss with respect to the predictions
    /// and returns the gradient with respect to the input.
    pub fn backward(&mut self, grad: &Array1<f64>) -> Array3<f64> {
        let mut g = grad.clone().into_shape_with_order((grad.len(), 1, 1)).expect("contiguous");
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g);
        }
        g
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Every parameter including non-trainable buffers, in a stable order.
    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn regularization_penalty(&self) -> f64 {
        regularization_penalty(self.params())
    }

    pub fn add_regularization_grad(&mut self) {
        add_regularization_grad(self.params_mut());
    }

    pub fn summary(&self) -> Vec<LayerSummary> {
        self.layers
            .iter()
            .map(|l| LayerSummary {
                name: l.name().to_string(),
                params: l.trainable_count(),
            })
            .collect()
    }

    pub fn trainable_count(&self) -> usize {
        self.layers.iter().map(|l| l.trainable_count()).sum()
    }

    /// Named copies of every parameter and buffer.
    pub fn state(&self) -> Vec<(String, Array2<f64>)> {
        self.params()
            .into_iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect()
    }

    /// Overwrites parameters from `state`; names and shapes must match exactly.
    pub fn load_state(&mut self, state: &[(String, Array2<f64>)]) -> Result<()> {
        let mut params = self.params_mut();
        if params.len() != state.len() {
            return Err(NnError::SnapshotMismatch(format!(
                "snapshot holds {} arrays, model expects {}",
                state.len(),
                params.len()
            )));
        }
        for (p, (name, value)) in params.iter().zip(state) {
            if &p.name != name || p.value.dim() != value.dim() {
                return Err(NnError::SnapshotMismatch(format!(
                    "array '{name}' {:?} does not match model parameter '{}' {:?}",
                    value.dim(),
                    p.name,
                    p.value.dim()
                )));
            }
        }
        for (p, (_, value)) in params.iter_mut().zip(state) {
            p.value.assign(value);
        }
        Ok(())
    }
}
