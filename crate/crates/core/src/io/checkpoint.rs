//! Checkpoint file: named f64 tensors, little-endian.
//!
//! ```text
//! magic    4 bytes "DADL"
//! version  u32     1
//! count    u32
//! per record: u16 name length + UTF-8 name, u8 rank, rank x u32 dims,
//!             prod(dims) f64 values
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

use super::{write_atomic, Reader};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DADL";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(params: &ParamSet) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        let n = u16::try_from(name.len()).map_err(|_| Error::invalid(format!("parameter name {name} is too long")))?;
        out.extend_from_slice(&n.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let rank = u8::try_from(t.ndim()).map_err(|_| Error::invalid(format!("{name} has too many axes")))?;
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::invalid(format!("{name} axis of {d} is too long")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<ParamSet> {
    let mut r = Reader::new(bytes, path);
    let magic = r.array::<4>("magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            path: path.into(),
            found: magic,
            expected: CHECKPOINT_MAGIC,
        });
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::BadVersion {
            path: path.into(),
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let count = r.u32("record count")?;
    let mut params = ParamSet::new();
    for i in 0..count {
        let name = r.string(&format!("record {i} name"))?;
        let rank = r.array::<1>("rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|n| n.checked_mul(8).is_some())
            .ok_or_else(|| Error::DimOverflow {
                path: path.into(),
                detail: format!("record {name} shape {shape:?}"),
            })?;
        let raw = r.bytes(numel * 8, &format!("record {name} values"))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if params.get(&name).is_some() {
            return Err(Error::Malformed {
                path: path.into(),
                detail: format!("record {name} appears twice"),
            });
        }
        params.insert(name, Tensor::new(shape, data)?);
    }
    if r.remaining() > 0 {
        return Err(Error::Malformed {
            path: path.into(),
            detail: format!("{} trailing bytes", r.remaining()),
        });
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ParamSet, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(params)?)
}

pub fn load_checkpoint(path: &Path) -> Result<ParamSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
