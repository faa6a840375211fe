//! Repeated stratified k-fold assignment for a continuous target.

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::seeds;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FoldError {
    #[error("{n} samples cannot fill {k} folds")]
    TooFewSamples { n: usize, k: usize },
    #[error("invalid fold setup: {0}")]
    InvalidSetup(String),
    #[error("target at index {0} is not finite")]
    NonFiniteTarget(usize),
}

/// Fold label of every sample, one row per repeat.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<Vec<usize>>,
}

impl FoldPlan {
    pub fn repeats(&self) -> usize {
        self.assignments.len()
    }

    /// `(train, validation)` indices, ascending.
    pub fn split(&self, repeat: usize, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut val = Vec::new();
        for (i, &f) in self.assignments[repeat].iter().enumerate() {
            if f == fold {
                val.push(i);
            } else {
                train.push(i);
            }
        }
        (train, val)
    }

    /// `(repeat, fold)` pairs in report order.
    pub fn jobs(&self) -> Vec<(usize, usize)> {
        (0..self.repeats()).flat_map(|r| (0..self.k).map(move |f| (r, f))).collect()
    }
}

/// Quantile bin of every target: rank `r` of `n` falls in bin `r * bins / n`.
pub fn quantile_bins(targets: &[f64], bins: usize) -> Vec<usize> {
    let n = targets.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| targets[a].total_cmp(&targets[b]).then(a.cmp(&b)));
    let mut out = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = rank * bins / n;
    }
    out
}

/// Within each quantile bin the members are shuffled and dealt round-robin
/// over the folds, continuing the deal across bins so fold sizes stay
/// balanced as well.
pub fn stratified_kfold(
    targets: &[f64],
    k: usize,
    bins: usize,
    repeats: usize,
    seed: u64,
) -> Result<FoldPlan, FoldError> {
    if k < 2 || bins < 1 || repeats < 1 {
        return Err(FoldError::InvalidSetup(format!("k={k}, bins={bins}, repeats={repeats}")));
    }
    if targets.len() < k {
        return Err(FoldError::TooFewSamples { n: targets.len(), k });
    }
    if let Some(i) = targets.iter().position(|t| !t.is_finite()) {
        return Err(FoldError::NonFiniteTarget(i));
    }
    let bin_of = quantile_bins(targets, bins);
    let mut members = vec![Vec::new(); bins];
    for (i, &b) in bin_of.iter().enumerate() {
        members[b].push(i);
    }
    let mut assignments = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let mut rng = seeds::stream(seed, "fold", &[r as u64]);
        let mut labels = vec![0; targets.len()];
        let mut dealt = 0;
        for group in &members {
            let mut g = group.clone();
            g.shuffle(&mut rng);
            for i in g {
                labels[i] = dealt % k;
                dealt += 1;
            }
        }
        assignments.push(labels);
    }
    Ok(FoldPlan { k, assignments })
}
