//! Star catalog loading, quality selection and the train/validation split.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeds;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed table {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("missing column '{0}'")]
    MissingColumn(String),
    #[error("row {row}: cannot parse field '{field}' from {value:?}")]
    Parse {
        row: usize,
        field: &'static str,
        value: String,
    },
    #[error("catalog has no data rows")]
    EmptyCatalog,
    #[error("cannot split {0} record(s) into two non-empty sets")]
    DegenerateSplit(usize),
    #[error("invalid train fraction {0}")]
    InvalidFraction(f64),
    #[error("no photometry for {} star(s): {}", .0.len(), join_ids(.0))]
    OrphanStar(Vec<u64>),
    #[error("star {source_id} has duplicate epoch at t = {time}")]
    DuplicateEpoch { source_id: u64, time: f64 },
    #[error("star {source_id}: catalog lists {expected} epochs, photometry has {actual}")]
    EpochCountMismatch {
        source_id: u64,
        expected: usize,
        actual: usize,
    },
}

fn join_ids(ids: &[u64]) -> String {
    let shown: Vec<String> = ids.iter().take(20).map(u64::to_string).collect();
    let more = if ids.len() > 20 { ", ..." } else { "" };
    format!("{}{more}", shown.join(", "))
}

/// One catalog row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarRecord {
    pub id: u64,
    pub source_id: u64,
    /// Pulsation period in days.
    pub period: f64,
    /// Peak-to-peak G amplitude in magnitudes.
    pub amp_g: f64,
    pub n_epochs: usize,
    /// Target metallicity in dex.
    pub feh: f64,
    pub feh_sigma: f64,
    pub phi31_sigma: Option<f64>,
    /// BJD of maximum light.
    pub epoch_max: Option<f64>,
}

/// Time-ordered G-band photometry of one star.
#[derive(Debug, Clone, PartialEq)]
pub struct LightCurve {
    pub source_id: u64,
    /// `(time_bjd, mag_g)` pairs.
    pub points: Vec<(f64, f64)>,
}

/// Accepted header names for each catalog field, matched case-insensitively.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub id: Vec<String>,
    pub source_id: Vec<String>,
    pub period: Vec<String>,
    pub amp_g: Vec<String>,
    pub n_epochs: Vec<String>,
    pub feh: Vec<String>,
    pub feh_sigma: Vec<String>,
    pub phi31_sigma: Vec<String>,
    pub epoch_max: Vec<String>,
    /// When false a catalog without a phi31 uncertainty column loads, and
    /// every star then fails the phi31 cut unless that cut is disabled.
    pub require_phi31_sigma: bool,
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            id: names(&["id"]),
            source_id: names(&["source_id"]),
            period: names(&["period", "pf"]),
            amp_g: names(&["AmpG", "amp_g", "peak_to_peak_g"]),
            n_epochs: names(&["#epochs", "n_epochs", "num_clean_epochs_g"]),
            feh: names(&["[Fe/H]", "feh"]),
            feh_sigma: names(&["σ[Fe/H]", "sigma[Fe/H]", "feh_sigma", "feh_error"]),
            phi31_sigma: names(&["σφ31", "phi31_sigma", "phi31_g_error", "sigma_phi31"]),
            epoch_max: names(&["epoch_max", "epoch_g"]),
            require_phi31_sigma: true,
        }
    }
}

/// Field delimiter guessed from the file extension: tab for `.tsv`, comma otherwise.
pub fn delimiter_for(path: &Path) -> u8 {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("tsv") => b'\t',
        _ => b',',
    }
}

fn open(path: &Path, delimiter: u8) -> Result<csv::Reader<std::fs::File>, CatalogError> {
    let file = std::fs::File::open(path).map_err(|source| CatalogError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(file))
}

fn find(headers: &csv::StringRecord, aliases: &[String]) -> Option<usize> {
    headers
        .iter()
        .position(|h| aliases.iter().any(|a| a.eq_ignore_ascii_case(h)))
}

fn require(headers: &csv::StringRecord, aliases: &[String]) -> Result<usize, CatalogError> {
    find(headers, aliases).ok_or_else(|| CatalogError::MissingColumn(aliases.first().cloned().unwrap_or_default()))
}

fn parse_f64(rec: &csv::StringRecord, col: usize, row: usize, field: &'static str) -> Result<f64, CatalogError> {
    let raw = rec.get(col).unwrap_or("");
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(CatalogError::Parse {
            row,
            field,
            value: raw.to_string(),
        }),
    }
}

fn parse_opt_f64(
    rec: &csv::StringRecord,
    col: Option<usize>,
    row: usize,
    field: &'static str,
) -> Result<Option<f64>, CatalogError> {
    match col.map(|c| rec.get(c).unwrap_or("")) {
        None => Ok(None),
        Some(s) if s.is_empty() || s.eq_ignore_ascii_case("nan") || s.eq_ignore_ascii_case("null") => Ok(None),
        Some(_) => parse_f64(rec, col.expect("checked"), row, field).map(Some),
    }
}

fn parse_u64(rec: &csv::StringRecord, col: usize, row: usize, field: &'static str) -> Result<u64, CatalogError> {
    let raw = rec.get(col).unwrap_or("");
    raw.parse::<u64>().map_err(|_| CatalogError::Parse {
        row,
        field,
        value: raw.to_string(),
    })
}

/// Reads a delimited catalog. Row numbers in errors count data rows from 1.
pub fn load_catalog(path: &Path, delimiter: u8, columns: &ColumnMap) -> Result<Vec<StarRecord>, CatalogError> {
    let mut reader = open(path, delimiter)?;
    let csv_err = |source| CatalogError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let headers = reader.headers().map_err(csv_err)?.clone();
    let c_id = find(&headers, &columns.id);
    let c_source = require(&headers, &columns.source_id)?;
    let c_period = require(&headers, &columns.period)?;
    let c_amp = require(&headers, &columns.amp_g)?;
    let c_epochs = require(&headers, &columns.n_epochs)?;
    let c_feh = require(&headers, &columns.feh)?;
    let c_feh_sigma = require(&headers, &columns.feh_sigma)?;
    let c_phi31 = if columns.require_phi31_sigma {
        Some(require(&headers, &columns.phi31_sigma)?)
    } else {
        find(&headers, &columns.phi31_sigma)
    };
    let c_epoch_max = find(&headers, &columns.epoch_max);

    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = i + 1;
        let period = parse_f64(&rec, c_period, row, "period")?;
        if period <= 0.0 {
            return Err(CatalogError::Parse {
                row,
                field: "period",
                value: period.to_string(),
            });
        }
        let amp_g = parse_f64(&rec, c_amp, row, "amp_g")?;
        let n_epochs = parse_u64(&rec, c_epochs, row, "n_epochs")? as usize;
        let feh_sigma = parse_f64(&rec, c_feh_sigma, row, "feh_sigma")?;
        if feh_sigma < 0.0 {
            return Err(CatalogError::Parse {
                row,
                field: "feh_sigma",
                value: feh_sigma.to_string(),
            });
        }
        out.push(StarRecord {
            id: match c_id {
                Some(c) => parse_u64(&rec, c, row, "id")?,
                None => i as u64,
            },
            source_id: parse_u64(&rec, c_source, row, "source_id")?,
            period,
            amp_g,
            n_epochs,
            feh: parse_f64(&rec, c_feh, row, "feh")?,
            feh_sigma,
            phi31_sigma: parse_opt_f64(&rec, c_phi31, row, "phi31_sigma")?,
            epoch_max: parse_opt_f64(&rec, c_epoch_max, row, "epoch_max")?,
        });
    }
    if out.is_empty() {
        return Err(CatalogError::EmptyCatalog);
    }
    Ok(out)
}

/// Reads `(source_id, time_bjd, mag_g)` rows grouped by star, in file order.
pub fn load_photometry(path: &Path, delimiter: u8) -> Result<BTreeMap<u64, Vec<(f64, f64)>>, CatalogError> {
    let mut reader = open(path, delimiter)?;
    let csv_err = |source| CatalogError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let headers = reader.headers().map_err(csv_err)?.clone();
    let c_source = require(&headers, &names(&["source_id"]))?;
    let c_time = require(&headers, &names(&["time_bjd", "time", "g_transit_time"]))?;
    let c_mag = require(&headers, &names(&["mag_g", "mag", "g_transit_mag"]))?;
    let mut out: BTreeMap<u64, Vec<(f64, f64)>> = BTreeMap::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = i + 1;
        let id = parse_u64(&rec, c_source, row, "source_id")?;
        let t = parse_f64(&rec, c_time, row, "time_bjd")?;
        let m = parse_f64(&rec, c_mag, row, "mag_g")?;
        out.entry(id).or_default().push((t, m));
    }
    Ok(out)
}

/// Thresholds of the quality cuts. All comparisons are inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionCriteria {
    pub max_feh_sigma: f64,
    pub max_amp_g: f64,
    pub min_epochs: usize,
    pub max_phi31_sigma: f64,
    pub feh_min: f64,
    pub feh_max: f64,
}

impl Default for SelectionCriteria {
    fn default() -> Self {
        Self {
            max_feh_sigma: 0.4,
            max_amp_g: 1.4,
            min_epochs: 50,
            max_phi31_sigma: 0.10,
            feh_min: -3.0,
            feh_max: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Period,
    MaxFehSigma,
    MaxAmpG,
    MinEpochs,
    MaxPhi31Sigma,
    FehRange,
}

impl Rule {
    pub fn as_str(self) -> &'static str {
        match self {
            Rule::Period => "period",
            Rule::MaxFehSigma => "max_feh_sigma",
            Rule::MaxAmpG => "max_amp_g",
            Rule::MinEpochs => "min_epochs",
            Rule::MaxPhi31Sigma => "max_phi31_sigma",
            Rule::FehRange => "feh_range",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub record: StarRecord,
    pub rule: Rule,
    /// The value that failed; NaN when it was missing.
    pub value: f64,
}

impl SelectionCriteria {
    /// The first rule `r` fails, with the offending value.
    pub fn first_failure(&self, r: &StarRecord) -> Option<(Rule, f64)> {
        if !(r.period.is_finite() && r.period > 0.0) {
            return Some((Rule::Period, r.period));
        }
        if !(r.feh_sigma <= self.max_feh_sigma) {
            return Some((Rule::MaxFehSigma, r.feh_sigma));
        }
        if !(r.amp_g <= self.max_amp_g) {
            return Some((Rule::MaxAmpG, r.amp_g));
        }
        if r.n_epochs < self.min_epochs {
            return Some((Rule::MinEpochs, r.n_epochs as f64));
        }
        match r.phi31_sigma {
            Some(s) if s <= self.max_phi31_sigma => {}
            other => return Some((Rule::MaxPhi31Sigma, other.unwrap_or(f64::NAN))),
        }
        if !(r.feh >= self.feh_min && r.feh <= self.feh_max) {
            return Some((Rule::FehRange, r.feh));
        }
        None
    }
}

pub fn apply_selection(
    records: &[StarRecord],
    criteria: &SelectionCriteria,
) -> (Vec<StarRecord>, Vec<Rejection>) {
    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    for r in records {
        match criteria.first_failure(r) {
            None => accepted.push(r.clone()),
            Some((rule, value)) => rejected.push(Rejection {
                record: r.clone(),
                rule,
                value,
            }),
        }
    }
    (accepted, rejected)
}

/// Writes `(source_id, failed_rule, offending_value)` rows.
pub fn write_rejections<W: std::io::Write>(w: W, rejected: &[Rejection]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["source_id", "failed_rule", "offending_value"])?;
    for r in rejected {
        let value = if r.value.is_nan() { String::new() } else { r.value.to_string() };
        out.write_record([r.record.source_id.to_string(), r.rule.to_string(), value])?;
    }
    out.flush()?;
    Ok(())
}

/// Fraction giving the 4801 / 1201 partition of 6002 stars.
pub const DEFAULT_TRAIN_FRACTION: f64 = 4801.0 / 6002.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: DEFAULT_TRAIN_FRACTION,
            seed: 0,
        }
    }
}

/// Indices of the training and validation sides, each in ascending order.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>), CatalogError> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(CatalogError::InvalidFraction(spec.train_fraction));
    }
    let n_train = (spec.train_fraction * n as f64).round() as usize;
    if n < 2 || n_train == 0 || n_train >= n {
        return Err(CatalogError::DegenerateSplit(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeds::stream(spec.seed, "split", &[]));
    let mut train = order[..n_train].to_vec();
    let mut valid = order[n_train..].to_vec();
    train.sort_unstable();
    valid.sort_unstable();
    Ok((train, valid))
}

/// Seeded uniform shuffle followed by a prefix cut; both sides keep input order.
pub fn split_train_validation(
    records: &[StarRecord],
    spec: &SplitSpec,
) -> Result<(Vec<StarRecord>, Vec<StarRecord>), CatalogError> {
    let (train, valid) = split_indices(records.len(), spec)?;
    Ok((
        train.into_iter().map(|i| records[i].clone()).collect(),
        valid.into_iter().map(|i| records[i].clone()).collect(),
    ))
}

/// Pairs every record with its photometry sorted by time.
pub fn join_photometry(
    records: &[StarRecord],
    photometry: &BTreeMap<u64, Vec<(f64, f64)>>,
) -> Result<Vec<(StarRecord, LightCurve)>, CatalogError> {
    let orphans: Vec<u64> = records
        .iter()
        .filter(|r| !photometry.contains_key(&r.source_id))
        .map(|r| r.source_id)
        .collect();
    if !orphans.is_empty() {
        return Err(CatalogError::OrphanStar(orphans));
    }
    records
        .iter()
        .map(|r| {
            let mut points = photometry[&r.source_id].clone();
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            if let Some(w) = points.windows(2).find(|w| w[0].0 >= w[1].0) {
                return Err(CatalogError::DuplicateEpoch {
                    source_id: r.source_id,
                    time: w[1].0,
                });
            }
            if points.len() != r.n_epochs {
                return Err(CatalogError::EpochCountMismatch {
                    source_id: r.source_id,
                    expected: r.n_epochs,
                    actual: points.len(),
                });
            }
            Ok((
                r.clone(),
                LightCurve {
                    source_id: r.source_id,
                    points,
                },
            ))
        })
        .collect()
}
