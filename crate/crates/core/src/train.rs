//! Mini-batch training with Adam, weighted loss and early stopping.

use feh_nn::{weighted_mse, Adam, Context, Model, ModelSpec, NnError};
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::folds::FoldError;
use crate::metrics::MetricError;
use crate::seeds;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Fold(#[from] FoldError),
    #[error("loss diverged to {loss} at epoch {epoch}, batch {batch}")]
    DivergedLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("{weights} weights for {samples} samples")]
    Misaligned { weights: usize, samples: usize },
    #[error("series {0} has no target")]
    MissingTarget(u64),
    #[error("repeat {repeat}, fold {fold}: {source}")]
    InFold {
        repeat: usize,
        fold: usize,
        #[source]
        source: Box<EvalError>,
    },
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Non-improving epochs tolerated before stopping.
    pub patience: usize,
    pub folds: usize,
    pub repeats: usize,
    pub stratification_bins: usize,
    pub seed: u64,
    /// A batch loss above this multiple of the zero-predictor loss counts as divergence.
    pub divergence_factor: f64,
    /// Worker threads for fold and cell jobs; all cores when absent.
    pub threads: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            learning_rate: 0.01,
            max_epochs: 500,
            patience: 20,
            folds: 5,
            repeats: 3,
            stratification_bins: 10,
            seed: 42,
            divergence_factor: 1e4,
            threads: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::InvalidConfig(m));
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1".into());
        }
        if self.folds < 2 {
            return bad(format!("folds must be at least 2, got {}", self.folds));
        }
        if self.stratification_bins < 2 {
            return bad(format!("stratification_bins must be at least 2, got {}", self.stratification_bins));
        }
        if self.repeats < 1 {
            return bad("repeats must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub train: Vec<f64>,
    pub validation: Vec<f64>,
}

pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub model: Model,
    pub curve: LossCurve,
    /// Zero-based index of the restored epoch.
    pub best_epoch: usize,
    pub epochs_run: usize,
}

const EVAL_CHUNK: usize = 512;

/// Inference-mode predictions for `idx`, evaluated in fixed chunks.
pub fn predict_indices(model: &mut Model, ds: &Dataset, idx: &[usize]) -> Result<Array1<f64>, NnError> {
    let mut out = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(EVAL_CHUNK) {
        out.extend(model.predict(&ds.batch(chunk))?);
    }
    Ok(Array1::from(out))
}

fn targets_of(ds: &Dataset, idx: &[usize]) -> Result<Array1<f64>, EvalError> {
    idx.iter()
        .map(|&i| ds.series[i].target.ok_or(EvalError::MissingTarget(ds.series[i].source_id)))
        .collect()
}

fn weights_of(weights: &[f64], idx: &[usize]) -> Array1<f64> {
    idx.iter().map(|&i| weights[i]).collect()
}

/// Trains a fresh model on `train_idx`, monitoring weighted validation loss
/// on `val_idx`. `job` names the random substreams (initialisation,
/// shuffling, dropout) so distinct folds draw independent streams.
pub fn train(
    spec: &ModelSpec,
    ds: &Dataset,
    weights: &[f64],
    train_idx: &[usize],
    val_idx: &[usize],
    config: &TrainConfig,
    job: &[u64],
) -> Result<TrainOutcome, EvalError> {
    config.validate()?;
    if weights.len() != ds.len() {
        return Err(EvalError::Misaligned {
            weights: weights.len(),
            samples: ds.len(),
        });
    }
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(EvalError::InvalidConfig("training and validation sets must be non-empty".into()));
    }
    let y_train = targets_of(ds, train_idx)?;
    let w_train = weights_of(weights, train_idx);
    let y_val = targets_of(ds, val_idx)?;
    let w_val = weights_of(weights, val_idx);
    let zero_loss = weighted_mse(Array1::zeros(y_train.len()).view(), y_train.view(), w_train.view())?.0;
    let limit = config.divergence_factor * zero_loss.max(1e-12);

    let mut model = Model::build(spec, seeds::derive_seed(config.seed, "init", job))?;
    let mut adam = Adam::new(config.learning_rate);
    let mut order: Vec<usize> = (0..train_idx.len()).collect();
    let mut curve = LossCurve::default();
    let mut best: Option<(f64, usize, Vec<(String, Array2<f64>)>)> = None;
    let mut since_best = 0;
    let mut epochs_run = 0;

    for epoch in 0..config.max_epochs {
        let mut rng = seeds::stream(config.seed, "shuffle", &[job, &[epoch as u64]].concat());
        order.shuffle(&mut rng);
        let (mut loss_sum, mut weight_sum) = (0.0, 0.0);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let rows: Vec<usize> = chunk.iter().map(|&k| train_idx[k]).collect();
            let y = chunk.iter().map(|&k| y_train[k]).collect::<Array1<f64>>();
            let w = chunk.iter().map(|&k| w_train[k]).collect::<Array1<f64>>();
            let mut ctx = Context::training(seeds::derive_seed(
                config.seed,
                "dropout",
                &[job, &[epoch as u64, b as u64]].concat(),
            ));
            let pred = model.forward(&ds.batch(&rows), &mut ctx)?;
            let (loss, grad) = weighted_mse(pred.view(), y.view(), w.view())?;
            let total = loss + model.regularization_penalty();
            if !total.is_finite() || total > limit {
                return Err(EvalError::DivergedLoss { epoch, batch: b, loss: total });
            }
            model.zero_grad();
            model.backward(&grad);
            model.add_regularization_grad();
            adam.step(model.params_mut());
            let ws = w.sum();
            loss_sum += loss * ws;
            weight_sum += ws;
        }
        let penalty = model.regularization_penalty();
        curve.train.push(loss_sum / weight_sum + penalty);
        let pred = predict_indices(&mut model, ds, val_idx)?;
        let val_loss = weighted_mse(pred.view(), y_val.view(), w_val.view())?.0 + penalty;
        if !val_loss.is_finite() {
            return Err(EvalError::DivergedLoss {
                epoch,
                batch: usize::MAX,
                loss: val_loss,
            });
        }
        curve.validation.push(val_loss);
        epochs_run = epoch + 1;
        match &best {
            Some((b, _, _)) if val_loss >= *b => {
                since_best += 1;
                if since_best > config.patience {
                    break;
                }
            }
            _ => {
                best = Some((val_loss, epoch, model.state()));
                since_best = 0;
            }
        }
    }
    let best_epoch = match best {
        Some((_, e, state)) => {
            model.load_state(&state)?;
            e
        }
        None => 0,
    };
    Ok(TrainOutcome {
        model,
        curve,
        best_epoch,
        epochs_run,
    })
}
