//! Builders for the nine regression architectures.

use crate::layers::CellKind;
use crate::param::Regularizer;
use crate::spec::{LayerSpec, ModelKind, ModelSpec, SPEC_FORMAT_VERSION};

/// Free hyperparameters of the zoo. [`ZooParams::standard`] holds the full-size
/// settings; [`ZooParams::tiny`] shrinks widths for fast tests.
#[derive(Debug, Clone, PartialEq)]
pub struct ZooParams {
    pub input_channels: usize,
    pub conv_filters: Vec<usize>,
    pub conv_kernels: Vec<usize>,
    pub resnet_blocks: usize,
    pub resnet_filters: Vec<usize>,
    pub resnet_kernels: Vec<usize>,
    pub inception_blocks: usize,
    pub inception_modules: usize,
    pub inception_bottleneck: usize,
    pub inception_filters: usize,
    pub inception_kernels: Vec<usize>,
    pub inception_pool: usize,
    pub rnn_units: Vec<usize>,
    pub rnn_dropout: Vec<f64>,
    pub conv_rnn_units: Vec<usize>,
    pub conv_rnn_dropout: Vec<f64>,
    pub pool_window: usize,
    pub pool_stride: usize,
    pub reg: f64,
}

impl ZooParams {
    pub fn standard() -> Self {
        Self {
            input_channels: 2,
            conv_filters: vec![128, 256, 128],
            conv_kernels: vec![8, 5, 3],
            resnet_blocks: 3,
            resnet_filters: vec![64, 64, 64],
            resnet_kernels: vec![8, 5, 3],
            inception_blocks: 2,
            inception_modules: 3,
            inception_bottleneck: 32,
            inception_filters: 32,
            inception_kernels: vec![10, 20, 40],
            inception_pool: 3,
            rnn_units: vec![20, 16, 8],
            rnn_dropout: vec![0.2, 0.2, 0.1],
            conv_rnn_units: vec![20, 16],
            conv_rnn_dropout: vec![0.2, 0.1],
            pool_window: 2,
            pool_stride: 2,
            reg: 2e-6,
        }
    }

    pub fn tiny() -> Self {
        Self {
            conv_filters: vec![4, 6, 4],
            resnet_filters: vec![4, 4, 4],
            inception_bottleneck: 3,
            inception_filters: 2,
            inception_kernels: vec![3, 5, 8],
            rnn_units: vec![5, 4, 3],
            conv_rnn_units: vec![5, 4],
            ..Self::standard()
        }
    }
}

impl Default for ZooParams {
    fn default() -> Self {
        Self::standard()
    }
}

pub fn build(kind: ModelKind, p: &ZooParams) -> ModelSpec {
    match kind {
        ModelKind::Fcn => build_fcn(p),
        ModelKind::ResNet => build_resnet(p),
        ModelKind::InceptionTime => build_inception_time(p),
        ModelKind::Lstm | ModelKind::BiLstm | ModelKind::Gru | ModelKind::BiGru => build_rnn(kind, p),
        ModelKind::ConvLstm | ModelKind::ConvGru => build_conv_rnn(kind, p),
    }
}

fn spec(kind: ModelKind, p: &ZooParams, layers: Vec<LayerSpec>) -> ModelSpec {
    ModelSpec {
        format_version: SPEC_FORMAT_VERSION,
        kind,
        input_channels: p.input_channels,
        layers,
    }
}

fn conv_stack(p: &ZooParams) -> impl Iterator<Item = LayerSpec> + '_ {
    p.conv_filters
        .iter()
        .zip(&p.conv_kernels)
        .map(|(&filters, &kernel)| LayerSpec::ConvBlock { filters, kernel })
}

pub fn build_fcn(p: &ZooParams) -> ModelSpec {
    let mut layers: Vec<_> = conv_stack(p).collect();
    layers.push(LayerSpec::GlobalAveragePool);
    layers.push(LayerSpec::Dense { units: 1 });
    spec(ModelKind::Fcn, p, layers)
}

pub fn build_resnet(p: &ZooParams) -> ModelSpec {
    let mut layers: Vec<_> = p
        .resnet_filters
        .iter()
        .take(p.resnet_blocks)
        .map(|&f| LayerSpec::ResidualBlock {
            filters: vec![f; p.resnet_kernels.len()],
            kernels: p.resnet_kernels.clone(),
        })
        .collect();
    layers.push(LayerSpec::GlobalAveragePool);
    layers.push(LayerSpec::Dense { units: 1 });
    spec(ModelKind::ResNet, p, layers)
}

pub fn build_inception_time(p: &ZooParams) -> ModelSpec {
    let mut layers: Vec<_> = (0..p.inception_blocks)
        .map(|_| LayerSpec::InceptionBlock {
            modules: p.inception_modules,
            bottleneck: p.inception_bottleneck,
            filters: p.inception_filters,
            kernels: p.inception_kernels.clone(),
            pool: p.inception_pool,
        })
        .collect();
    layers.push(LayerSpec::GlobalAveragePool);
    layers.push(LayerSpec::Dense { units: 1 });
    spec(ModelKind::InceptionTime, p, layers)
}

fn cell_of(kind: ModelKind) -> CellKind {
    match kind {
        ModelKind::Lstm | ModelKind::BiLstm | ModelKind::ConvLstm => CellKind::Lstm,
        _ => CellKind::Gru,
    }
}

/// Kernel and recurrent regularizers per architecture.
pub fn regularizers(kind: ModelKind, c: f64) -> (Regularizer, Regularizer) {
    match kind {
        ModelKind::BiLstm | ModelKind::BiGru => (Regularizer::l1(c), Regularizer::l1(c)),
        _ => (Regularizer::l2(c), Regularizer::l1(c)),
    }
}

fn recurrent_blocks(kind: ModelKind, units: &[usize], rates: &[f64], reg: f64) -> Vec<LayerSpec> {
    let bidirectional = matches!(kind, ModelKind::BiLstm | ModelKind::BiGru);
    let (kernel_reg, recurrent_reg) = regularizers(kind, reg);
    let mut layers = Vec::with_capacity(units.len() * 2);
    for (i, (&u, &rate)) in units.iter().zip(rates).enumerate() {
        layers.push(LayerSpec::Recurrent {
            cell: cell_of(kind),
            units: u,
            bidirectional,
            return_sequences: i + 1 < units.len(),
            kernel_reg,
            recurrent_reg,
        });
        layers.push(LayerSpec::Dropout { rate });
    }
    layers
}

pub fn build_rnn(kind: ModelKind, p: &ZooParams) -> ModelSpec {
    assert!(kind.is_recurrent(), "{kind} is not a recurrent stack");
    let mut layers = recurrent_blocks(kind, &p.rnn_units, &p.rnn_dropout, p.reg);
    layers.push(LayerSpec::Dense { units: 1 });
    spec(kind, p, layers)
}

pub fn build_conv_rnn(kind: ModelKind, p: &ZooParams) -> ModelSpec {
    assert!(
        matches!(kind, ModelKind::ConvLstm | ModelKind::ConvGru),
        "{kind} is not a convolutional-recurrent model"
    );
    let mut layers: Vec<_> = conv_stack(p).collect();
    layers.push(LayerSpec::MaxPool {
        window: p.pool_window,
        stride: p.pool_stride,
    });
    layers.extend(recurrent_blocks(kind, &p.conv_rnn_units, &p.conv_rnn_dropout, p.reg));
    layers.push(LayerSpec::Dense { units: 1 });
    spec(kind, p, layers)
}
