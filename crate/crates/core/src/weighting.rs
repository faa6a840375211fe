//! Inverse-density sample weights over the target distribution.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WeightingError {
    #[error("density needs at least two distinct finite values")]
    DegenerateDistribution,
    #[error("density underflows at value {0}")]
    ZeroDensity(f64),
    #[error("invalid bandwidth {0}")]
    InvalidBandwidth(f64),
    #[error("weight cap {0} is below the mean weight of 1")]
    InvalidCap(f64),
}

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Gaussian kernel density estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityModel {
    pub bandwidth: f64,
    pub support: Vec<f64>,
}

impl DensityModel {
    pub fn density(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let s: f64 = self
            .support
            .iter()
            .map(|&v| {
                let z = (x - v) / h;
                (-0.5 * z * z).exp()
            })
            .sum();
        s * INV_SQRT_2PI / (h * self.support.len() as f64)
    }
}

/// Scott's rule, `sigma * n^(-1/5)` with the sample standard deviation.
pub fn scott_bandwidth(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    var.sqrt() * n.powf(-0.2)
}

pub fn fit_density(values: &[f64], bandwidth: Option<f64>) -> Result<DensityModel, WeightingError> {
    if values.len() < 2 || values.iter().any(|v| !v.is_finite()) {
        return Err(WeightingError::DegenerateDistribution);
    }
    if values.iter().all(|&v| v == values[0]) {
        return Err(WeightingError::DegenerateDistribution);
    }
    let bandwidth = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(WeightingError::InvalidBandwidth(h)),
        None => scott_bandwidth(values),
    };
    Ok(DensityModel {
        bandwidth,
        support: values.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightConfig {
    /// Kernel bandwidth in dex; Scott's rule when absent.
    pub bandwidth: Option<f64>,
    /// Upper bound on any single weight after normalisation.
    pub cap: Option<f64>,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self {
            bandwidth: None,
            cap: Some(20.0),
        }
    }
}

/// Weights proportional to `1 / density(value)` with mean one.
pub fn compute_weights(model: &DensityModel, values: &[f64], cap: Option<f64>) -> Result<Vec<f64>, WeightingError> {
    let densities: Vec<f64> = values.iter().map(|&v| model.density(v)).collect();
    for (&v, &d) in values.iter().zip(&densities) {
        if !(d > 0.0 && d.is_finite()) || !(1.0 / d).is_finite() {
            return Err(WeightingError::ZeroDensity(v));
        }
    }
    weights_from_density_values(&densities, cap)
}

/// Normalised inverse of (possibly unnormalised) density values.
///
/// With a cap, weights above it are clipped and the rest rescaled until the
/// mean is one again and nothing exceeds the cap.
pub fn weights_from_density_values(densities: &[f64], cap: Option<f64>) -> Result<Vec<f64>, WeightingError> {
    if densities.is_empty() {
        return Ok(Vec::new());
    }
    if let Some(&d) = densities.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
        return Err(WeightingError::ZeroDensity(d));
    }
    let n = densities.len() as f64;
    let raw: Vec<f64> = densities.iter().map(|d| 1.0 / d).collect();
    let Some(cap) = cap else {
        let total: f64 = raw.iter().sum();
        return Ok(raw.iter().map(|r| r * n / total).collect());
    };
    if !(cap >= 1.0) {
        return Err(WeightingError::InvalidCap(cap));
    }
    let mut capped = vec![false; raw.len()];
    loop {
        let n_capped = capped.iter().filter(|&&c| c).count() as f64;
        let free: f64 = raw.iter().zip(&capped).filter(|(_, &c)| !c).map(|(r, _)| r).sum();
        let scale = (n - n_capped * cap) / free;
        let mut changed = false;
        for (r, c) in raw.iter().zip(capped.iter_mut()) {
            if !*c && r * scale > cap {
                *c = true;
                changed = true;
            }
        }
        if !changed {
            return Ok(raw
                .iter()
                .zip(&capped)
                .map(|(r, &c)| if c { cap } else { r * scale })
                .collect());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn standard_normal_peak_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = Normal::new(0.0, 1.0).unwrap();
        let xs: Vec<f64> = (0..10_000).map(|_| n.sample(&mut rng)).collect();
        let m = fit_density(&xs, None).unwrap();
        assert!((m.density(0.0) - 0.398_942).abs() < 0.03);
    }

    #[test]
    fn density_integrates_to_one() {
        let m = fit_density(&[-2.0, -1.5, -1.4, 0.2, 0.5], None).unwrap();
        let (lo, hi, steps) = (-10.0, 10.0, 20_000);
        let dx = (hi - lo) / steps as f64;
        let area: f64 = (0..steps).map(|i| m.density(lo + (i as f64 + 0.5) * dx) * dx).sum();
        assert!((area - 1.0).abs() < 1e-3, "{area}");
    }

    #[test]
    fn identical_values_are_degenerate() {
        assert_eq!(fit_density(&[1.0, 1.0, 1.0], None), Err(WeightingError::DegenerateDistribution));
        assert_eq!(fit_density(&[1.0], None), Err(WeightingError::DegenerateDistribution));
    }

    #[test]
    fn two_point_density_is_symmetric() {
        let m = fit_density(&[-2.0, 0.0], Some(0.5)).unwrap();
        for d in [0.1, 0.5, 1.0, 2.3] {
            assert!((m.density(-1.0 - d) - m.density(-1.0 + d)).abs() < 1e-9);
        }
    }

    #[test]
    fn scale_of_density_does_not_matter() {
        let d = [0.3, 0.1, 0.7, 0.05, 0.2];
        let doubled: Vec<f64> = d.iter().map(|v| 2.0 * v).collect();
        let a = weights_from_density_values(&d, None).unwrap();
        let b = weights_from_density_values(&doubled, None).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn cap_clips_and_renormalises() {
        let d = [1.0, 1.0, 1.0, 1.0, 1e-4];
        let w = weights_from_density_values(&d, Some(3.0)).unwrap();
        assert_eq!(w[4], 3.0);
        assert!(w[..4].iter().all(|&v| (v - 0.5).abs() < 1e-12));
        let mean = w.iter().sum::<f64>() / 5.0;
        assert!((mean - 1.0).abs() < 1e-12);
        assert!(weights_from_density_values(&d, Some(0.5)).is_err());
    }

    #[test]
    fn zero_density_is_reported() {
        let m = fit_density(&[0.0, 0.1], Some(0.01)).unwrap();
        assert!(matches!(compute_weights(&m, &[50.0], None), Err(WeightingError::ZeroDensity(_))));
    }
}
