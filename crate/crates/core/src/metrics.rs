//! Regression metrics, plain and weighted.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("targets have zero variance, R² is undefined")]
    ZeroVariance,
    #[error("weights sum to {0}, expected a positive total")]
    NonPositiveWeightSum(f64),
    #[error("length mismatch: {targets} targets, {predictions} predictions, {weights} weights")]
    LengthMismatch {
        targets: usize,
        predictions: usize,
        weights: usize,
    },
    #[error("no samples to score")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub r2: f64,
    pub rmse: f64,
    pub mae: f64,
    pub wrmse: f64,
    pub wmae: f64,
}

impl Metrics {
    pub const NAMES: [&'static str; 5] = ["r2", "rmse", "mae", "wrmse", "wmae"];

    pub fn values(&self) -> [f64; 5] {
        [self.r2, self.rmse, self.mae, self.wrmse, self.wmae]
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        Self::NAMES.iter().position(|n| *n == name).map(|i| self.values()[i])
    }
}

fn check_lengths(y: &[f64], yhat: &[f64], w: usize) -> Result<(), MetricError> {
    if y.len() != yhat.len() || y.len() != w {
        return Err(MetricError::LengthMismatch {
            targets: y.len(),
            predictions: yhat.len(),
            weights: w,
        });
    }
    if y.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

/// Coefficient of determination, `1 - SS_res / SS_tot`.
pub fn r2(y: &[f64], yhat: &[f64]) -> Result<f64, MetricError> {
    check_lengths(y, yhat, y.len())?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if ss_tot == 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

fn weighted(y: &[f64], yhat: &[f64], w: &[f64]) -> Result<(f64, f64), MetricError> {
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(MetricError::NonPositiveWeightSum(total));
    }
    let (mut sq, mut abs) = (0.0, 0.0);
    for ((a, b), wi) in y.iter().zip(yhat).zip(w) {
        let e = a - b;
        sq += wi * e * e;
        abs += wi * e.abs();
    }
    Ok(((sq / total).sqrt(), abs / total))
}

pub fn metric_suite(y: &[f64], yhat: &[f64], w: &[f64]) -> Result<Metrics, MetricError> {
    check_lengths(y, yhat, w.len())?;
    let ones = vec![1.0; y.len()];
    let (rmse, mae) = weighted(y, yhat, &ones)?;
    let (wrmse, wmae) = weighted(y, yhat, w)?;
    Ok(Metrics {
        r2: r2(y, yhat)?,
        rmse,
        mae,
        wrmse,
        wmae,
    })
}
