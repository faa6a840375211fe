//! Synthetic RRab-like corpus with a known metallicity relation.
//!
//! Each star gets a period, a G amplitude and a rise fraction (the share of
//! the cycle spent brightening). Its light curve is a sawtooth in magnitude:
//! brightest at phase 0, a slow linear decline, then a fast linear rise. The
//! target is [`true_feh`] of those three quantities plus Gaussian noise.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::catalog::{LightCurve, StarRecord};
use crate::seeds;

pub const PERIOD_RANGE: (f64, f64) = (0.45, 0.75);
pub const AMPLITUDE_RANGE: (f64, f64) = (0.4, 1.2);
pub const RISE_RANGE: (f64, f64) = (0.1, 0.3);

fn unit(x: f64, (lo, hi): (f64, f64)) -> f64 {
    2.0 * (x - lo) / (hi - lo) - 1.0
}

/// Noise-free metallicity of a synthetic star.
pub fn true_feh(period: f64, amplitude: f64, rise: f64) -> f64 {
    let p = unit(period, PERIOD_RANGE);
    let a = unit(amplitude, AMPLITUDE_RANGE);
    let s = unit(rise, RISE_RANGE);
    -1.5 - 0.5 * p + 0.6 * a + 0.4 * s + 0.15 * a * s
}

/// Magnitude offset from the curve's brightest point at `phase`.
pub fn sawtooth(phase: f64, amplitude: f64, rise: f64) -> f64 {
    let x = phase.rem_euclid(1.0);
    if x < 1.0 - rise {
        amplitude * x / (1.0 - rise)
    } else {
        amplitude * (1.0 - (x - (1.0 - rise)) / rise)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub stars: usize,
    /// Standard deviation of the target noise in dex.
    pub feh_noise: f64,
    /// Standard deviation of the photometric noise in magnitudes.
    pub mag_noise: f64,
    pub min_epochs: usize,
    pub max_epochs: usize,
    /// Observation window in days.
    pub baseline: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            stars: 2000,
            feh_noise: 0.1,
            mag_noise: 0.02,
            min_epochs: 50,
            max_epochs: 120,
            baseline: 1000.0,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticStar {
    pub record: StarRecord,
    pub curve: LightCurve,
    pub rise: f64,
    /// Target before noise.
    pub clean_feh: f64,
}

pub fn generate(config: &SyntheticConfig) -> Vec<SyntheticStar> {
    let noise = Normal::new(0.0, config.feh_noise.max(0.0)).expect("finite noise");
    let mag_noise = Normal::new(0.0, config.mag_noise.max(0.0)).expect("finite noise");
    (0..config.stars)
        .map(|i| {
            let mut rng = seeds::stream(config.seed, "synthetic", &[i as u64]);
            let period = rng.random_range(PERIOD_RANGE.0..PERIOD_RANGE.1);
            let amplitude = rng.random_range(AMPLITUDE_RANGE.0..AMPLITUDE_RANGE.1);
            let rise = rng.random_range(RISE_RANGE.0..RISE_RANGE.1);
            let peak_mag = rng.random_range(14.0..18.0);
            let epoch_max = 2_457_000.0 + rng.random_range(0.0..period);
            let n = rng.random_range(config.min_epochs..=config.max_epochs);
            let mut times: Vec<f64> = (0..n)
                .map(|_| 2_456_900.0 + rng.random_range(0.0..config.baseline))
                .collect();
            times.sort_by(f64::total_cmp);
            let source_id = 4_000_000_000_000_000_000 + i as u64 * 7919;
            let points = times
                .iter()
                .map(|&t| {
                    let phase = (t - epoch_max) / period;
                    (t, peak_mag + sawtooth(phase, amplitude, rise) + mag_noise.sample(&mut rng))
                })
                .collect();
            let clean = true_feh(period, amplitude, rise);
            SyntheticStar {
                record: StarRecord {
                    id: i as u64,
                    source_id,
                    period,
                    amp_g: amplitude,
                    n_epochs: n,
                    feh: clean + noise.sample(&mut rng),
                    feh_sigma: rng.random_range(0.05..0.35),
                    phi31_sigma: Some(rng.random_range(0.005..0.08)),
                    epoch_max: Some(epoch_max),
                },
                curve: LightCurve { source_id, points },
                rise,
                clean_feh: clean,
            }
        })
        .collect()
}

/// Writes `catalog.csv` and `photometry.csv` into `dir` and returns their paths.
pub fn write_corpus(dir: &Path, stars: &[SyntheticStar]) -> std::io::Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let cat_path = dir.join("catalog.csv");
    let phot_path = dir.join("photometry.csv");
    let mut cat = csv::Writer::from_path(&cat_path)?;
    cat.write_record(["id", "source_id", "period", "AmpG", "#epochs", "[Fe/H]", "σ[Fe/H]", "σφ31", "epoch_max"])?;
    for s in stars {
        let r = &s.record;
        cat.write_record([
            r.id.to_string(),
            r.source_id.to_string(),
            format!("{:?}", r.period),
            format!("{:?}", r.amp_g),
            r.n_epochs.to_string(),
            format!("{:?}", r.feh),
            format!("{:?}", r.feh_sigma),
            r.phi31_sigma.map(|v| format!("{v:?}")).unwrap_or_default(),
            r.epoch_max.map(|v| format!("{v:?}")).unwrap_or_default(),
        ])?;
    }
    cat.flush()?;
    let mut phot = std::io::BufWriter::new(std::fs::File::create(&phot_path)?);
    writeln!(phot, "source_id,time_bjd,mag_g")?;
    for s in stars {
        for (t, m) in &s.curve.points {
            writeln!(phot, "{},{t:?},{m:?}", s.curve.source_id)?;
        }
    }
    phot.flush()?;
    Ok((cat_path, phot_path))
}

pub fn pairs(stars: &[SyntheticStar]) -> Vec<(StarRecord, LightCurve)> {
    stars.iter().map(|s| (s.record.clone(), s.curve.clone())).collect()
}
