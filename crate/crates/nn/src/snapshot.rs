//! Binary parameter snapshots.
//!
//! Layout (little endian): magic, format version, spec hash, spec TOML, then
//! each array as name, rows, cols and raw `f64` values. Values are stored
//! bit-for-bit so a reloaded model predicts identically.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{NnError, Result};
use crate::model::Model;
use crate::spec::ModelSpec;

const MAGIC: &[u8; 8] = b"FEHSNAP\0";
const VERSION: u32 = 1;

/// Immutable trained state of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub spec: ModelSpec,
    pub arrays: Vec<(String, Array2<f64>)>,
}

impl Snapshot {
    pub fn capture(model: &Model) -> Self {
        Self {
            spec: model.spec().clone(),
            arrays: model.state(),
        }
    }

    pub fn spec_hash(&self) -> String {
        self.spec.hash()
    }

    /// Rebuilds the model described by the embedded spec.
    pub fn restore(&self) -> Result<Model> {
        let mut model = Model::build(&self.spec, 0)?;
        model.load_state(&self.arrays)?;
        Ok(model)
    }

    /// Like [`Snapshot::restore`] but refuses a snapshot trained for another spec.
    pub fn restore_for(&self, spec: &ModelSpec) -> Result<Model> {
        let (want, have) = (spec.hash(), self.spec_hash());
        if want != have {
            return Err(NnError::SnapshotMismatch(format!(
                "snapshot was trained for spec {have}, requested spec is {want}"
            )));
        }
        self.restore()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        write_bytes(&mut w, self.spec_hash().as_bytes())?;
        write_bytes(&mut w, self.spec.to_toml().as_bytes())?;
        w.write_all(&(self.arrays.len() as u32).to_le_bytes())?;
        for (name, a) in &self.arrays {
            write_bytes(&mut w, name.as_bytes())?;
            let (r, c) = a.dim();
            w.write_all(&(r as u64).to_le_bytes())?;
            w.write_all(&(c as u64).to_le_bytes())?;
            for v in a.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(NnError::MalformedSnapshot("bad magic header".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(NnError::MalformedSnapshot(format!("unsupported version {version}")));
        }
        let hash = read_string(&mut r)?;
        let spec = ModelSpec::from_toml(&read_string(&mut r)?)
            .map_err(|e| NnError::MalformedSnapshot(format!("embedded spec: {e}")))?;
        if spec.hash() != hash {
            return Err(NnError::MalformedSnapshot(
                "embedded spec does not match its recorded hash".into(),
            ));
        }
        let n = read_u32(&mut r)? as usize;
        let mut arrays = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            let name = read_string(&mut r)?;
            let rows = read_u64(&mut r)? as usize;
            let cols = read_u64(&mut r)? as usize;
            let len = rows
                .checked_mul(cols)
                .filter(|&l| l <= 1 << 32)
                .ok_or_else(|| NnError::MalformedSnapshot(format!("array '{name}' is implausibly large")))?;
            let mut raw = vec![0u8; len * 8];
            r.read_exact(&mut raw).map_err(truncated)?;
            let values = raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            let a = Array2::from_shape_vec((rows, cols), values).expect("length checked");
            arrays.push((name, a));
        }
        Ok(Self { spec, arrays })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(bytes.as_slice())
    }
}

fn truncated(e: std::io::Error) -> NnError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        NnError::MalformedSnapshot("truncated snapshot".into())
    } else {
        e.into()
    }
}

fn write_bytes<W: Write>(w: &mut W, b: &[u8]) -> Result<()> {
    w.write_all(&(b.len() as u32).to_le_bytes())?;
    w.write_all(b)?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn read_string<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    if len > 1 << 24 {
        return Err(NnError::MalformedSnapshot("string field too long".into()));
    }
    let mut b = vec![0u8; len];
    r.read_exact(&mut b).map_err(truncated)?;
    String::from_utf8(b).map_err(|_| NnError::MalformedSnapshot("invalid UTF-8".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::ModelKind;
    use crate::tensor::Batch;
    use crate::zoo::{self, ZooParams};
    use ndarray::Array3;

    #[test]
    fn round_trip_is_bit_exact() {
        let x = Batch::unmasked(Array3::from_shape_fn((3, 12, 2), |(b, t, c)| {
            ((b * 31 + t * 7 + c) as f64 * 0.37).sin()
        }));
        for kind in ModelKind::ALL {
            let mut model = Model::build(&zoo::build(kind, &ZooParams::tiny()), 11).unwrap();
            let snap = Snapshot::capture(&model);
            let mut buf = Vec::new();
            snap.write_to(&mut buf).unwrap();
            let back = Snapshot::read_from(buf.as_slice()).unwrap();
            assert_eq!(back, snap);
            let mut restored = back.restore().unwrap();
            let a = model.predict(&x).unwrap();
            let b = restored.predict(&x).unwrap();
            assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()), "{kind}");
        }
    }

    #[test]
    fn spec_mismatch_is_refused() {
        let model = Model::build(&zoo::build(ModelKind::Gru, &ZooParams::tiny()), 0).unwrap();
        let snap = Snapshot::capture(&model);
        let other = zoo::build(ModelKind::Gru, &ZooParams::tiny()).with_dropout(0.4);
        assert!(matches!(snap.restore_for(&other), Err(NnError::SnapshotMismatch(_))));
        assert!(snap.restore_for(model.spec()).is_ok());
    }

    #[test]
    fn corrupt_input_is_reported() {
        let model = Model::build(&zoo::build(ModelKind::Fcn, &ZooParams::tiny()), 0).unwrap();
        let mut buf = Vec::new();
        Snapshot::capture(&model).write_to(&mut buf).unwrap();
        assert!(matches!(
            Snapshot::read_from(&buf[..buf.len() - 3]),
            Err(NnError::MalformedSnapshot(_))
        ));
        buf[0] = b'X';
        assert!(matches!(Snapshot::read_from(buf.as_slice()), Err(NnError::MalformedSnapshot(_))));
    }
}
