//! Feature datasets and their on-disk container.
//!
//! Container layout (little endian):
//!
//! ```text
//! magic    8 bytes  "FEHDSET\0"
//! version  u32      1
//! variant  u8       0 raw_padded, 1 spline_no_mean, 2 full
//! length   u64      timesteps per series
//! count    u64      number of series
//! per series:
//!   source_id  u64
//!   has_target u8, target f64 (NaN when absent)
//!   values     length * 2 f64, step-major
//!   mask       length bytes, 1 = valid
//! ```
//!
//! Values are written bit-for-bit, so a container round-trips exactly.

use std::io::{Read, Write};
use std::path::Path;

use feh_nn::Batch;
use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::preprocess::Variant;

const MAGIC: &[u8; 8] = b"FEHDSET\0";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed dataset container: {0}")]
    Malformed(String),
    #[error("series {index} has length {actual}, dataset length is {expected}")]
    Ragged {
        index: usize,
        expected: usize,
        actual: usize,
    },
}

/// Two-channel input sequence of one star.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSeries {
    pub source_id: u64,
    /// `[magnitude channel, phase * period]` per step.
    pub values: Vec<[f64; 2]>,
    /// `true` marks a real observation.
    pub mask: Vec<bool>,
    pub target: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub variant: Variant,
    pub length: usize,
    pub series: Vec<FeatureSeries>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    /// Subset in the order of `idx`.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            variant: self.variant,
            length: self.length,
            series: idx.iter().map(|&i| self.series[i].clone()).collect(),
        }
    }

    /// Stacks the selected series into a network batch.
    pub fn batch(&self, idx: &[usize]) -> Batch {
        let t = self.length;
        let mut data = Array3::zeros((idx.len(), t, 2));
        let mut mask = Array2::from_elem((idx.len(), t), false);
        for (b, &i) in idx.iter().enumerate() {
            let s = &self.series[i];
            for (k, v) in s.values.iter().enumerate() {
                data[[b, k, 0]] = v[0];
                data[[b, k, 1]] = v[1];
                mask[[b, k]] = s.mask[k];
            }
        }
        Batch { data, mask }
    }

    /// Targets of the selected series; missing targets read as NaN.
    pub fn targets(&self, idx: &[usize]) -> Array1<f64> {
        idx.iter()
            .map(|&i| self.series[i].target.unwrap_or(f64::NAN))
            .collect()
    }

    pub fn all_targets(&self) -> Vec<f64> {
        self.series.iter().map(|s| s.target.unwrap_or(f64::NAN)).collect()
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        for (i, s) in self.series.iter().enumerate() {
            if s.values.len() != self.length || s.mask.len() != self.length {
                return Err(DatasetError::Ragged {
                    index: i,
                    expected: self.length,
                    actual: s.values.len(),
                });
            }
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), DatasetError> {
        self.validate()?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&[self.variant.code()])?;
        w.write_all(&(self.length as u64).to_le_bytes())?;
        w.write_all(&(self.series.len() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.length * 17 + 17);
        for s in &self.series {
            buf.clear();
            buf.extend_from_slice(&s.source_id.to_le_bytes());
            buf.push(u8::from(s.target.is_some()));
            buf.extend_from_slice(&s.target.unwrap_or(f64::NAN).to_le_bytes());
            for v in &s.values {
                buf.extend_from_slice(&v[0].to_le_bytes());
                buf.extend_from_slice(&v[1].to_le_bytes());
            }
            buf.extend(s.mask.iter().map(|&m| u8::from(m)));
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, DatasetError> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, DatasetError> {
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(DatasetError::Malformed("bad magic header".into()));
        }
        let mut b4 = [0u8; 4];
        read_exact(&mut r, &mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != VERSION {
            return Err(DatasetError::Malformed(format!("unsupported version {version}")));
        }
        let mut b1 = [0u8; 1];
        read_exact(&mut r, &mut b1)?;
        let variant = Variant::from_code(b1[0])
            .ok_or_else(|| DatasetError::Malformed(format!("unknown variant code {}", b1[0])))?;
        let length = read_u64(&mut r)? as usize;
        let count = read_u64(&mut r)? as usize;
        if length > 1 << 24 {
            return Err(DatasetError::Malformed(format!("implausible length {length}")));
        }
        let mut series = Vec::with_capacity(count.min(1 << 20));
        let mut raw = vec![0u8; length * 16];
        let mut mask = vec![0u8; length];
        for _ in 0..count {
            let source_id = read_u64(&mut r)?;
            read_exact(&mut r, &mut b1)?;
            let has_target = b1[0] != 0;
            let target = f64::from_bits(read_u64(&mut r)?);
            read_exact(&mut r, &mut raw)?;
            read_exact(&mut r, &mut mask)?;
            let values = raw
                .chunks_exact(16)
                .map(|c| {
                    [
                        f64::from_le_bytes(c[..8].try_into().expect("8 bytes")),
                        f64::from_le_bytes(c[8..].try_into().expect("8 bytes")),
                    ]
                })
                .collect();
            series.push(FeatureSeries {
                source_id,
                values,
                mask: mask.iter().map(|&m| m != 0).collect(),
                target: has_target.then_some(target),
            });
        }
        Ok(Self {
            variant,
            length,
            series,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let bytes = std::fs::read(path)?;
        Self::read_from(bytes.as_slice())
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), DatasetError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => DatasetError::Malformed("truncated container".into()),
        _ => e.into(),
    })
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, DatasetError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Provenance written next to every container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub variant: Variant,
    pub length: usize,
    pub count: usize,
    pub failures: usize,
    pub config_hash: String,
    pub content_sha256: String,
    pub config: serde_json::Value,
}

impl Manifest {
    pub fn describe<C: Serialize>(ds: &Dataset, failures: usize, config: &C) -> Result<Self, DatasetError> {
        let config = serde_json::to_value(config).map_err(|e| DatasetError::Malformed(e.to_string()))?;
        let canonical = serde_json::to_vec(&config).expect("json value serializes");
        Ok(Self {
            format_version: VERSION,
            variant: ds.variant,
            length: ds.length,
            count: ds.len(),
            failures,
            config_hash: hex::encode(Sha256::digest(&canonical)),
            content_sha256: hex::encode(Sha256::digest(ds.to_bytes()?)),
            config,
        })
    }
}

/// Writes `(source_id, weight)` rows.
pub fn write_weights<W: Write>(w: W, ids: &[u64], weights: &[f64]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["source_id", "weight"])?;
    for (id, wt) in ids.iter().zip(weights) {
        out.write_record([id.to_string(), format!("{wt:?}")])?;
    }
    out.flush()?;
    Ok(())
}
