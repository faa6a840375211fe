//! Phase folding, alignment to maximum light, spline resampling and the three
//! input variants.

mod spline;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use spline::{fit as fit_spline, Lambda, SplineFit};

use crate::catalog::{LightCurve, StarRecord};
use crate::dataset::{Dataset, FeatureSeries};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PreprocessError {
    #[error("non-finite observation time or phase")]
    NonFinitePhase,
    #[error("non-finite value in spline input")]
    NonFinite,
    #[error("light curve has no points")]
    EmptyCurve,
    #[error("invalid period {0}")]
    InvalidPeriod(f64),
    #[error("spline needs {required} distinct phases, got {distinct}")]
    InsufficientPoints { distinct: usize, required: usize },
    #[error("smoothing system is singular")]
    SingularFit,
    #[error("invalid smoothing parameter {0}")]
    InvalidLambda(f64),
    #[error("resample length {0} is below the minimum of 8")]
    InvalidLength(usize),
}

/// A light curve folded on its period, sorted by phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasedCurve {
    pub source_id: u64,
    /// `(phase, magnitude)` with phase in `[0, 1)`.
    pub points: Vec<(f64, f64)>,
    pub period: f64,
    /// Arithmetic mean of the input magnitudes.
    pub mean_mag: f64,
    /// True when phase zero came from a catalogued epoch of maximum light.
    pub anchored: bool,
}

/// Fractional part of `(t - epoch) / period`, always in `[0, 1)`.
pub fn phase_of(t: f64, epoch: f64, period: f64) -> f64 {
    let p = ((t - epoch) / period).rem_euclid(1.0);
    // rem_euclid can round up to exactly 1 for tiny negative offsets
    if p >= 1.0 {
        0.0
    } else {
        p
    }
}

pub fn phase_fold(curve: &LightCurve, period: f64, epoch_max: f64) -> Result<PhasedCurve, PreprocessError> {
    if !(period > 0.0 && period.is_finite()) {
        return Err(PreprocessError::InvalidPeriod(period));
    }
    if !epoch_max.is_finite() {
        return Err(PreprocessError::NonFinitePhase);
    }
    if curve.points.is_empty() {
        return Err(PreprocessError::EmptyCurve);
    }
    let mut points = Vec::with_capacity(curve.points.len());
    for &(t, m) in &curve.points {
        if !t.is_finite() {
            return Err(PreprocessError::NonFinitePhase);
        }
        points.push((phase_of(t, epoch_max, period), m));
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mean_mag = curve.points.iter().map(|p| p.1).sum::<f64>() / curve.points.len() as f64;
    Ok(PhasedCurve {
        source_id: curve.source_id,
        points,
        period,
        mean_mag,
        anchored: true,
    })
}

/// Rotates phases so the brightest point (smallest magnitude, lowest phase on
/// ties) sits at phase 0. Curves folded on a catalogued epoch are returned as is.
pub fn align_to_maximum(curve: &PhasedCurve) -> PhasedCurve {
    if curve.anchored || curve.points.is_empty() {
        return curve.clone();
    }
    let (mut best, mut at) = (f64::INFINITY, 0.0);
    for &(ph, m) in &curve.points {
        if m < best {
            best = m;
            at = ph;
        }
    }
    let mut out = curve.clone();
    for p in &mut out.points {
        p.0 = (p.0 - at).rem_euclid(1.0);
        if p.0 >= 1.0 {
            p.0 = 0.0;
        }
    }
    out.points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    out
}

/// Folds on the catalogued epoch of maximum when present, otherwise on the
/// first observation followed by brightest-point alignment.
pub fn fold_and_align(record: &StarRecord, curve: &LightCurve) -> Result<PhasedCurve, PreprocessError> {
    match record.epoch_max {
        Some(e) => phase_fold(curve, record.period, e),
        None => {
            let t0 = curve.points.first().ok_or(PreprocessError::EmptyCurve)?.0;
            let mut folded = phase_fold(curve, record.period, t0)?;
            folded.anchored = false;
            Ok(align_to_maximum(&folded))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Folded, aligned observations padded to a common length.
    RawPadded,
    /// Spline-resampled magnitudes without mean subtraction.
    SplineNoMean,
    /// Spline-resampled, mean-subtracted magnitudes.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::RawPadded, Variant::SplineNoMean, Variant::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::RawPadded => "raw_padded",
            Variant::SplineNoMean => "spline_no_mean",
            Variant::Full => "full",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Variant::RawPadded => 0,
            Variant::SplineNoMean => 1,
            Variant::Full => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Variant::ALL.into_iter().find(|v| v.code() == c)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        match norm.as_str() {
            "raw_padded" | "raw" => Ok(Variant::RawPadded),
            "spline_no_mean" | "no_mean" => Ok(Variant::SplineNoMean),
            "full" => Ok(Variant::Full),
            _ => Err(format!("unknown variant '{s}' (expected raw_padded, spline_no_mean or full)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaStrategy {
    Gcv,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub resample_length: usize,
    pub lambda_strategy: LambdaStrategy,
    /// Used when `lambda_strategy` is `fixed`.
    pub lambda: f64,
    pub pad_value: f64,
    /// Duplicate the first and last folded points one period away before fitting.
    pub periodic_extension: bool,
    /// Pad (or truncate) raw series to this length instead of the corpus maximum.
    pub raw_length: Option<usize>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            resample_length: 100,
            lambda_strategy: LambdaStrategy::Gcv,
            lambda: 1e-4,
            pad_value: -1.0,
            periodic_extension: true,
            raw_length: None,
        }
    }
}

impl PreprocessConfig {
    fn lambda(&self) -> Lambda {
        match self.lambda_strategy {
            LambdaStrategy::Gcv => Lambda::Gcv,
            LambdaStrategy::Fixed => Lambda::Fixed(self.lambda),
        }
    }
}

/// Fits the smoothing spline to a folded curve.
pub fn fit_smoothing_spline(curve: &PhasedCurve, config: &PreprocessConfig) -> Result<SplineFit, PreprocessError> {
    let mut distinct = curve.points.iter().map(|p| p.0).collect::<Vec<_>>();
    distinct.dedup();
    if distinct.len() < 4 {
        return Err(PreprocessError::InsufficientPoints {
            distinct: distinct.len(),
            required: 4,
        });
    }
    let mut pts = curve.points.clone();
    if config.periodic_extension && pts.len() >= 2 {
        let first = pts[0];
        let last = pts[pts.len() - 1];
        pts.push((first.0 + 1.0, first.1));
        pts.push((last.0 - 1.0, last.1));
    }
    fit_spline(&pts, config.lambda())
}

/// Builds one input series. Raw series are left unpadded unless
/// `config.raw_length` is set; see [`pad_series`].
pub fn build_feature_series(
    star: &StarRecord,
    curve: &PhasedCurve,
    variant: Variant,
    config: &PreprocessConfig,
) -> Result<FeatureSeries, PreprocessError> {
    let p = curve.period;
    let mut series = match variant {
        Variant::RawPadded => {
            let values = curve
                .points
                .iter()
                .map(|&(ph, m)| [m - curve.mean_mag, ph * p])
                .collect::<Vec<_>>();
            FeatureSeries {
                source_id: star.source_id,
                mask: vec![true; values.len()],
                values,
                target: Some(star.feh),
            }
        }
        Variant::SplineNoMean | Variant::Full => {
            let len = config.resample_length;
            if len < 8 {
                return Err(PreprocessError::InvalidLength(len));
            }
            let fit = fit_smoothing_spline(curve, config)?;
            let grid = fit.resample(len);
            let offset = if variant == Variant::Full {
                grid.iter().map(|g| g.1).sum::<f64>() / len as f64
            } else {
                0.0
            };
            FeatureSeries {
                source_id: star.source_id,
                values: grid.iter().map(|&(ph, m)| [m - offset, ph * p]).collect(),
                mask: vec![true; len],
                target: Some(star.feh),
            }
        }
    };
    if variant == Variant::RawPadded {
        if let Some(len) = config.raw_length {
            pad_series(&mut series, len, config.pad_value);
        }
    }
    Ok(series)
}

/// Truncates or pads `series` to `len` steps; padding holds `pad` in every
/// channel and is masked out.
pub fn pad_series(series: &mut FeatureSeries, len: usize, pad: f64) {
    series.values.truncate(len);
    series.mask.truncate(len);
    while series.values.len() < len {
        series.values.push([pad, pad]);
        series.mask.push(false);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarFailure {
    pub source_id: u64,
    pub reason: String,
}

/// Builds every star's series in input order. Stars that fail are reported
/// and skipped. Raw series are padded to the longest curve in the batch
/// unless `config.raw_length` fixes the length.
pub fn build_dataset(
    pairs: &[(StarRecord, LightCurve)],
    variant: Variant,
    config: &PreprocessConfig,
) -> (Dataset, Vec<StarFailure>) {
    let results: Vec<Result<FeatureSeries, StarFailure>> = pairs
        .par_iter()
        .map(|(star, curve)| {
            fold_and_align(star, curve)
                .and_then(|pc| build_feature_series(star, &pc, variant, config))
                .map_err(|e| StarFailure {
                    source_id: star.source_id,
                    reason: e.to_string(),
                })
        })
        .collect();
    let mut series = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(s) => series.push(s),
            Err(f) => failures.push(f),
        }
    }
    let length = match variant {
        Variant::RawPadded => {
            let len = config
                .raw_length
                .unwrap_or_else(|| series.iter().map(|s| s.values.len()).max().unwrap_or(0));
            for s in &mut series {
                pad_series(s, len, config.pad_value);
            }
            len
        }
        _ => config.resample_length,
    };
    (
        Dataset {
            variant,
            length,
            series,
        },
        failures,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(period: f64) -> StarRecord {
        StarRecord {
            id: 0,
            source_id: 42,
            period,
            amp_g: 0.8,
            n_epochs: 0,
            feh: -1.2,
            feh_sigma: 0.1,
            phi31_sigma: Some(0.02),
            epoch_max: None,
        }
    }

    /// Rapid rise over `rise` of the cycle, linear decline otherwise; brightest at `peak`.
    pub(crate) fn sawtooth(phase: f64, peak: f64, rise: f64) -> f64 {
        let x = (phase - peak).rem_euclid(1.0);
        if x < 1.0 - rise {
            15.0 + 0.8 * x / (1.0 - rise)
        } else {
            15.8 - 0.8 * (x - (1.0 - rise)) / rise
        }
    }

    #[test]
    fn folding_examples() {
        let (e, p) = (2_457_000.25, 0.6);
        assert_eq!(phase_of(e, e, p), 0.0);
        assert!((phase_of(e + p / 2.0, e, p) - 0.5).abs() < 1e-9);
        assert!((phase_of(e + 2.25 * p, e, p) - 0.25).abs() < 1e-9);
        assert!((phase_of(e - 0.25 * p, e, p) - 0.75).abs() < 1e-9);
    }

    #[test]
    fn fold_rejects_bad_input() {
        let c = LightCurve {
            source_id: 1,
            points: vec![(f64::NAN, 15.0)],
        };
        assert_eq!(phase_fold(&c, 0.5, 0.0), Err(PreprocessError::NonFinitePhase));
        assert_eq!(phase_fold(&c, 0.0, 0.0), Err(PreprocessError::InvalidPeriod(0.0)));
    }

    fn phased(points: Vec<(f64, f64)>) -> PhasedCurve {
        let mean_mag = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
        PhasedCurve {
            source_id: 1,
            points,
            period: 0.5,
            mean_mag,
            anchored: false,
        }
    }

    #[test]
    fn alignment_moves_brightest_point_to_zero() {
        let pts: Vec<_> = (0..40).map(|i| i as f64 / 40.0).map(|ph| (ph, sawtooth(ph, 0.3, 0.2))).collect();
        let aligned = align_to_maximum(&phased(pts.clone()));
        let brightest = aligned
            .points
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert_eq!(brightest.0, 0.0);
        for &(ph, m) in &pts {
            let shifted = (ph - 0.3f64).rem_euclid(1.0);
            assert!(aligned.points.iter().any(|q| (q.0 - shifted).abs() < 1e-12 && q.1 == m));
        }
        assert_eq!(align_to_maximum(&aligned), aligned);
    }

    #[test]
    fn aligned_or_flat_curves_are_unchanged() {
        let pts: Vec<_> = (0..10).map(|i| (i as f64 / 10.0, sawtooth(i as f64 / 10.0, 0.0, 0.2))).collect();
        assert_eq!(align_to_maximum(&phased(pts.clone())).points, pts);
        let flat: Vec<_> = (0..10).map(|i| (i as f64 / 10.0, 16.0)).collect();
        assert_eq!(align_to_maximum(&phased(flat.clone())).points, flat);
    }

    #[test]
    fn full_variant_grid_and_centering() {
        let pts: Vec<_> = (0..30).map(|i| (i as f64 / 30.0, 19.0)).collect();
        let cfg = PreprocessConfig {
            resample_length: 8,
            ..PreprocessConfig::default()
        };
        let s = build_feature_series(&record(0.5), &phased(pts), Variant::Full, &cfg).unwrap();
        let ch2: Vec<f64> = s.values.iter().map(|v| v[1]).collect();
        let expected: Vec<f64> = (0..8).map(|k| k as f64 / 8.0 * 0.5).collect();
        assert_eq!(ch2, expected);
        assert!(s.values.iter().all(|v| v[0].abs() < 1e-9));
    }

    #[test]
    fn no_mean_variant_keeps_magnitudes() {
        let pts: Vec<_> = (0..30).map(|i| i as f64 / 30.0).map(|ph| (ph, sawtooth(ph, 0.0, 0.25))).collect();
        let c = phased(pts);
        let cfg = PreprocessConfig::default();
        let full = build_feature_series(&record(0.5), &c, Variant::Full, &cfg).unwrap();
        let raw = build_feature_series(&record(0.5), &c, Variant::SplineNoMean, &cfg).unwrap();
        let mean = raw.values.iter().map(|v| v[0]).sum::<f64>() / 100.0;
        assert!(mean > 14.0);
        for (a, b) in full.values.iter().zip(&raw.values) {
            assert!((a[0] - (b[0] - mean)).abs() < 1e-9);
            assert_eq!(a[1], b[1]);
        }
    }

    #[test]
    fn raw_variant_pads_to_corpus_maximum() {
        let mk = |n: usize, id: u64| {
            let mut r = record(0.55);
            r.source_id = id;
            r.n_epochs = n;
            let pts = (0..n).map(|i| (i as f64 * 0.37, 15.0 + (i as f64).sin() * 0.3)).collect();
            (r, LightCurve { source_id: id, points: pts })
        };
        let pairs = vec![mk(53, 1), mk(245, 2)];
        let (ds, failures) = build_dataset(&pairs, Variant::RawPadded, &PreprocessConfig::default());
        assert!(failures.is_empty());
        assert_eq!(ds.length, 245);
        let s = &ds.series[0];
        assert_eq!(s.mask.iter().filter(|&&m| m).count(), 53);
        assert!(s.values[53..].iter().all(|v| *v == [-1.0, -1.0]));
        assert!(s.mask[53..].iter().all(|&m| !m));
        assert_eq!(ds.series[1].mask.iter().filter(|&&m| m).count(), 245);
    }

    #[test]
    fn failing_star_is_reported_without_aborting() {
        let good = |id: u64| {
            let mut r = record(0.6);
            r.source_id = id;
            let pts = (0..40).map(|i| (i as f64 * 0.173, sawtooth(i as f64 * 0.173 / 0.6, 0.0, 0.2))).collect();
            (r, LightCurve { source_id: id, points: pts })
        };
        let mut bad = good(3);
        bad.1.points.truncate(3);
        let pairs = vec![good(1), bad, good(2)];
        let (ds, failures) = build_dataset(&pairs, Variant::Full, &PreprocessConfig::default());
        assert_eq!(ds.series.iter().map(|s| s.source_id).collect::<Vec<_>>(), [1, 2]);
        assert_eq!(failures.len(), 1);
        assert_eq!(failures[0].source_id, 3);

        let (empty, none) = build_dataset(&[], Variant::Full, &PreprocessConfig::default());
        assert!(empty.series.is_empty() && none.is_empty());
    }
}
