//! Architecture descriptions.
//!
//! A [`ModelSpec`] is plain data: it can be written to and read from a
//! versioned TOML document and is hashed to tie trained snapshots to the
//! architecture they were produced with.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{NnError, Result};
use crate::layers::CellKind;
use crate::param::Regularizer;

pub const SPEC_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "FCN")]
    Fcn,
    #[serde(rename = "ResNet")]
    ResNet,
    #[serde(rename = "InceptionTime")]
    InceptionTime,
    #[serde(rename = "LSTM")]
    Lstm,
    #[serde(rename = "BiLSTM")]
    BiLstm,
    #[serde(rename = "GRU")]
    Gru,
    #[serde(rename = "BiGRU")]
    BiGru,
    #[serde(rename = "ConvLSTM")]
    ConvLstm,
    #[serde(rename = "ConvGRU")]
    ConvGru,
}

impl ModelKind {
    /// Column order of the results matrix.
    pub const ALL: [ModelKind; 9] = [
        ModelKind::Fcn,
        ModelKind::ResNet,
        ModelKind::InceptionTime,
        ModelKind::Lstm,
        ModelKind::BiLstm,
        ModelKind::Gru,
        ModelKind::BiGru,
        ModelKind::ConvLstm,
        ModelKind::ConvGru,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Fcn => "FCN",
            ModelKind::ResNet => "ResNet",
            ModelKind::InceptionTime => "InceptionTime",
            ModelKind::Lstm => "LSTM",
            ModelKind::BiLstm => "BiLSTM",
            ModelKind::Gru => "GRU",
            ModelKind::BiGru => "BiGRU",
            ModelKind::ConvLstm => "ConvLSTM",
            ModelKind::ConvGru => "ConvGRU",
        }
    }

    pub fn is_recurrent(self) -> bool {
        matches!(
            self,
            ModelKind::Lstm | ModelKind::BiLstm | ModelKind::Gru | ModelKind::BiGru
        )
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        let name = if lower == "inception" { "inceptiontime" } else { lower.as_str() };
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str().to_ascii_lowercase() == name)
            .ok_or_else(|| NnError::InvalidSpec(format!("unknown model kind '{s}'")))
    }
}

/// One architectural stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Conv1d -> BatchNorm -> ReLU.
    ConvBlock { filters: usize, kernel: usize },
    /// A chain of conv blocks added to the (projected) input, then ReLU.
    ResidualBlock {
        filters: Vec<usize>,
        kernels: Vec<usize>,
    },
    /// `modules` Inception modules wrapped in one residual connection.
    InceptionBlock {
        modules: usize,
        bottleneck: usize,
        filters: usize,
        kernels: Vec<usize>,
        pool: usize,
    },
    MaxPool { window: usize, stride: usize },
    Recurrent {
        cell: CellKind,
        units: usize,
        bidirectional: bool,
        return_sequences: bool,
        #[serde(default)]
        kernel_reg: Regularizer,
        #[serde(default)]
        recurrent_reg: Regularizer,
    },
    Dropout { rate: f64 },
    GlobalAveragePool,
    Dense { units: usize },
}

impl LayerSpec {
    /// Output channel count given the input channel count.
    pub fn out_channels(&self, input: usize) -> usize {
        match self {
            LayerSpec::ConvBlock { filters, .. } => *filters,
            LayerSpec::ResidualBlock { filters, .. } => filters.last().copied().unwrap_or(input),
            LayerSpec::InceptionBlock { filters, kernels, .. } => filters * (kernels.len() + 1),
            LayerSpec::Recurrent {
                units, bidirectional, ..
            } => units * if *bidirectional { 2 } else { 1 },
            LayerSpec::Dense { units } => *units,
            LayerSpec::MaxPool { .. } | LayerSpec::Dropout { .. } | LayerSpec::GlobalAveragePool => input,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub format_version: u32,
    pub kind: ModelKind,
    pub input_channels: usize,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != SPEC_FORMAT_VERSION {
            return Err(NnError::InvalidSpec(format!(
                "unsupported spec format version {}",
                self.format_version
            )));
        }
        if self.input_channels == 0 {
            return Err(NnError::InvalidSpec("input_channels must be positive".into()));
        }
        match self.layers.last() {
            Some(LayerSpec::Dense { units: 1 }) => {}
            _ => return Err(NnError::InvalidSpec("the last layer must be a 1-unit dense head".into())),
        }
        let mut seq = true;
        for layer in &self.layers {
            match layer {
                LayerSpec::Dropout { rate } if !(0.0..1.0).contains(rate) => {
                    return Err(NnError::InvalidRate(*rate));
                }
                LayerSpec::ResidualBlock { filters, kernels } if filters.len() != kernels.len() || filters.is_empty() => {
                    return Err(NnError::InvalidSpec(
                        "residual block needs matching non-empty filters and kernels".into(),
                    ));
                }
                LayerSpec::ConvBlock { .. }
                | LayerSpec::ResidualBlock { .. }
                | LayerSpec::InceptionBlock { .. }
                | LayerSpec::MaxPool { .. }
                    if !seq =>
                {
                    return Err(NnError::InvalidSpec(
                        "sequence layer placed after the temporal axis was reduced".into(),
                    ));
                }
                LayerSpec::GlobalAveragePool => seq = false,
                LayerSpec::Recurrent {
                    return_sequences: false,
                    ..
                } => seq = false,
                _ => {}
            }
        }
        if seq {
            return Err(NnError::InvalidSpec(
                "the temporal axis is never reduced before the dense head".into(),
            ));
        }
        Ok(())
    }

    /// Sets the rate of every dropout layer.
    pub fn with_dropout(mut self, rate: f64) -> Self {
        for layer in &mut self.layers {
            if let LayerSpec::Dropout { rate: r } = layer {
                *r = rate;
            }
        }
        self
    }

    pub fn has_dropout(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, LayerSpec::Dropout { .. }))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model spec serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ModelSpec = toml::from_str(text).map_err(|e| NnError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("model spec serializes");
        hex::encode(Sha256::digest(&json))
    }
}
