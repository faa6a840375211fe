//! Repeated stratified cross-validation and inference helpers.

use feh_nn::{ModelKind, ModelSpec, NnError, Snapshot};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::folds::stratified_kfold;
use crate::metrics::{metric_suite, Metrics};
use crate::preprocess::Variant;
use crate::train::{predict_indices, train, EvalError, LossCurve, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub source_id: u64,
    pub predicted: f64,
    pub truth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub repeat: usize,
    pub fold: usize,
    pub train: Metrics,
    pub validation: Metrics,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub curve: LossCurve,
    pub predictions: Vec<Prediction>,
}

/// Mean and population standard deviation over folds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub r2: Summary,
    pub rmse: Summary,
    pub mae: Summary,
    pub wrmse: Summary,
    pub wmae: Summary,
}

impl MetricSummary {
    pub fn of(metrics: &[Metrics]) -> Self {
        let s = |f: fn(&Metrics) -> f64| Summary::of(&metrics.iter().map(f).collect::<Vec<_>>());
        Self {
            r2: s(|m| m.r2),
            rmse: s(|m| m.rmse),
            mae: s(|m| m.mae),
            wrmse: s(|m| m.wrmse),
            wmae: s(|m| m.wmae),
        }
    }

    /// `(name, summary)` in the column order of the metric tables.
    pub fn entries(&self) -> [(&'static str, Summary); 5] {
        [
            ("r2", self.r2),
            ("rmse", self.rmse),
            ("mae", self.mae),
            ("wrmse", self.wrmse),
            ("wmae", self.wmae),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: ModelKind,
    pub variant: Variant,
    pub train: MetricSummary,
    pub validation: MetricSummary,
    pub folds: Vec<FoldReport>,
}

/// Runs `f` on a pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, EvalError> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| EvalError::ThreadPool(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

fn score(model: &mut feh_nn::Model, ds: &Dataset, weights: &[f64], idx: &[usize]) -> Result<(Metrics, Vec<f64>), EvalError> {
    let pred = predict_indices(model, ds, idx)?.to_vec();
    let y: Vec<f64> = ds.targets(idx).to_vec();
    let w: Vec<f64> = idx.iter().map(|&i| weights[i]).collect();
    Ok((metric_suite(&y, &pred, &w)?, pred))
}

fn run_fold(
    spec: &ModelSpec,
    ds: &Dataset,
    weights: &[f64],
    tr: &[usize],
    va: &[usize],
    config: &TrainConfig,
    repeat: usize,
    fold: usize,
) -> Result<FoldReport, EvalError> {
    let mut out = train(spec, ds, weights, tr, va, config, &[repeat as u64, fold as u64])?;
    let (train_m, _) = score(&mut out.model, ds, weights, tr)?;
    let (val_m, pred) = score(&mut out.model, ds, weights, va)?;
    Ok(FoldReport {
        repeat,
        fold,
        train: train_m,
        validation: val_m,
        epochs_run: out.epochs_run,
        best_epoch: out.best_epoch,
        curve: out.curve,
        predictions: va
            .iter()
            .zip(pred)
            .map(|(&i, p)| Prediction {
                source_id: ds.series[i].source_id,
                predicted: p,
                truth: ds.series[i].target,
            })
            .collect(),
    })
}

/// Trains `folds * repeats` models and aggregates their metrics. Fold jobs
/// run in parallel; reports come back in `(repeat, fold)` order. The first
/// failing job, in that order, is returned with its position.
pub fn cross_validate(
    spec: &ModelSpec,
    ds: &Dataset,
    weights: &[f64],
    config: &TrainConfig,
) -> Result<MetricsReport, EvalError> {
    config.validate()?;
    if weights.len() != ds.len() {
        return Err(EvalError::Misaligned {
            weights: weights.len(),
            samples: ds.len(),
        });
    }
    let mut targets = Vec::with_capacity(ds.len());
    for s in &ds.series {
        targets.push(s.target.ok_or(EvalError::MissingTarget(s.source_id))?);
    }
    let plan = stratified_kfold(&targets, config.folds, config.stratification_bins, config.repeats, config.seed)?;
    let jobs = plan.jobs();
    let results: Vec<Result<FoldReport, EvalError>> = with_threads(config.threads, || {
        jobs.par_iter()
            .map(|&(r, f)| {
                let (tr, va) = plan.split(r, f);
                run_fold(spec, ds, weights, &tr, &va, config, r, f).map_err(|e| EvalError::InFold {
                    repeat: r,
                    fold: f,
                    source: Box::new(e),
                })
            })
            .collect()
    })?;
    let folds = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let train_m: Vec<Metrics> = folds.iter().map(|f| f.train).collect();
    let val_m: Vec<Metrics> = folds.iter().map(|f| f.validation).collect();
    Ok(MetricsReport {
        model: spec.kind,
        variant: ds.variant,
        train: MetricSummary::of(&train_m),
        validation: MetricSummary::of(&val_m),
        folds,
    })
}

/// Restores the snapshot against `spec` (refusing a hash mismatch) and
/// predicts every series in inference mode.
pub fn predict(snapshot: &Snapshot, spec: Option<&ModelSpec>, ds: &Dataset) -> Result<Vec<Prediction>, NnError> {
    let mut model = match spec {
        Some(s) => snapshot.restore_for(s)?,
        None => snapshot.restore()?,
    };
    let idx: Vec<usize> = (0..ds.len()).collect();
    let pred = predict_indices(&mut model, ds, &idx)?;
    Ok(ds
        .series
        .iter()
        .zip(pred)
        .map(|(s, p)| Prediction {
            source_id: s.source_id,
            predicted: p,
            truth: s.target,
        })
        .collect())
}
