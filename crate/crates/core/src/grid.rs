//! Hyperparameter grid search over dropout, learning rate and batch size.

use std::cmp::Ordering;

use feh_nn::ModelSpec;
use serde::{Deserialize, Serialize};

use crate::cv::{cross_validate, MetricsReport};
use crate::dataset::Dataset;
use crate::train::{EvalError, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub dropout_rates: Vec<f64>,
    pub learning_rates: Vec<f64>,
    pub batch_sizes: Vec<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::standard()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl GridCell {
    fn cmp_config(&self, other: &Self) -> Ordering {
        self.dropout
            .total_cmp(&other.dropout)
            .then(self.learning_rate.total_cmp(&other.learning_rate))
            .then(self.batch_size.cmp(&other.batch_size))
    }

    pub fn apply(&self, spec: &ModelSpec, config: &TrainConfig) -> (ModelSpec, TrainConfig) {
        (
            spec.clone().with_dropout(self.dropout),
            TrainConfig {
                learning_rate: self.learning_rate,
                batch_size: self.batch_size,
                ..config.clone()
            },
        )
    }
}

impl GridSpec {
    pub fn standard() -> Self {
        Self {
            dropout_rates: vec![0.1, 0.2, 0.4, 0.6],
            learning_rates: vec![0.001, 0.01, 0.1],
            batch_sizes: vec![32, 64, 128, 256, 512],
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.dropout_rates.is_empty() || self.learning_rates.is_empty() || self.batch_sizes.is_empty() {
            return Err(EvalError::InvalidConfig("grid axes must be non-empty".into()));
        }
        Ok(())
    }

    /// Cartesian product, dropout outermost and batch size innermost.
    pub fn cells(&self) -> Vec<GridCell> {
        let mut out = Vec::new();
        for &dropout in &self.dropout_rates {
            for &learning_rate in &self.learning_rates {
                for &batch_size in &self.batch_sizes {
                    out.push(GridCell {
                        dropout,
                        learning_rate,
                        batch_size,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCell {
    pub rank: usize,
    pub cell: GridCell,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedCell {
    pub cell: GridCell,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub ranked: Vec<RankedCell>,
    pub failed: Vec<FailedCell>,
}

/// Evaluates every cell with `run` and ranks the successes by mean
/// validation wRMSE, then mean validation MAE, then the cell itself.
pub fn grid_search_with<F>(cells: &[GridCell], mut run: F) -> GridResult
where
    F: FnMut(&GridCell) -> Result<MetricsReport, EvalError>,
{
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for cell in cells {
        match run(cell) {
            Ok(report) => ok.push((*cell, report)),
            Err(e) => failed.push(FailedCell {
                cell: *cell,
                error: e.to_string(),
            }),
        }
    }
    ok.sort_by(|(ca, a), (cb, b)| {
        a.validation
            .wrmse
            .mean
            .total_cmp(&b.validation.wrmse.mean)
            .then(a.validation.mae.mean.total_cmp(&b.validation.mae.mean))
            .then(ca.cmp_config(cb))
    });
    GridResult {
        ranked: ok
            .into_iter()
            .enumerate()
            .map(|(i, (cell, report))| RankedCell { rank: i + 1, cell, report })
            .collect(),
        failed,
    }
}

pub fn grid_search(
    spec: &ModelSpec,
    ds: &Dataset,
    weights: &[f64],
    grid: &GridSpec,
    config: &TrainConfig,
) -> Result<GridResult, EvalError> {
    grid.validate()?;
    Ok(grid_search_with(&grid.cells(), |cell| {
        let (s, c) = cell.apply(spec, config);
        cross_validate(&s, ds, weights, &c)
    }))
}
