//! Binary epoch file, all integers and reals little-endian:
//!
//! ```text
//! magic      4 bytes  "EEG3"
//! version    u32      1
//! fs         f64
//! trials     u32
//! channels   u32
//! timesteps  u32
//! channel names, `channels` times: u16 byte length + UTF-8
//! subject id, session id: u16 byte length + UTF-8 each
//! labels     `trials` bytes, 0 or 1
//! payload    trials*channels*timesteps f32, trial-major
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::representation::EpochSet;

use super::{write_atomic, Reader};

pub const EPOCH_MAGIC: [u8; 4] = *b"EEG3";
pub const EPOCH_VERSION: u32 = 1;

pub fn encode_epochs(set: &EpochSet) -> Result<Vec<u8>> {
    let dim = |n: usize, what: &str| {
        u32::try_from(n).map_err(|_| Error::invalid(format!("{what} {n} does not fit the u32 header field")))
    };
    let mut out = Vec::with_capacity(64 + set.data().len() * 4);
    out.extend_from_slice(&EPOCH_MAGIC);
    out.extend_from_slice(&EPOCH_VERSION.to_le_bytes());
    out.extend_from_slice(&set.fs().to_le_bytes());
    out.extend_from_slice(&dim(set.trials(), "trial count")?.to_le_bytes());
    out.extend_from_slice(&dim(set.channels(), "channel count")?.to_le_bytes());
    out.extend_from_slice(&dim(set.timesteps(), "timestep count")?.to_le_bytes());
    for name in set.channel_names() {
        put_str(&mut out, name)?;
    }
    put_str(&mut out, &set.subject_id)?;
    put_str(&mut out, &set.session_id)?;
    out.extend_from_slice(set.labels());
    for v in set.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let n = u16::try_from(s.len()).map_err(|_| Error::invalid(format!("string of {} bytes is too long", s.len())))?;
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

/// Decodes a whole file image; `path` only labels errors.
pub fn decode_epochs(bytes: &[u8], path: &Path) -> Result<EpochSet> {
    let mut r = Reader::new(bytes, path);
    let magic = r.array::<4>("magic")?;
    if magic != EPOCH_MAGIC {
        return Err(Error::BadMagic {
            path: path.into(),
            found: magic,
            expected: EPOCH_MAGIC,
        });
    }
    let version = r.u32("version")?;
    if version != EPOCH_VERSION {
        return Err(Error::BadVersion {
            path: path.into(),
            found: version,
            supported: EPOCH_VERSION,
        });
    }
    let fs = r.f64("sampling rate")?;
    let trials = r.u32("trial count")? as u64;
    let channels = r.u32("channel count")? as u64;
    let timesteps = r.u32("timestep count")? as u64;
    let samples = trials
        .checked_mul(channels)
        .and_then(|n| n.checked_mul(timesteps))
        .filter(|n| n.checked_mul(4).is_some_and(|b| usize::try_from(b).is_ok()))
        .ok_or_else(|| Error::DimOverflow {
            path: path.into(),
            detail: format!("{trials} x {channels} x {timesteps} samples exceed the addressable size"),
        })? as usize;
    let mut names = Vec::with_capacity(channels.min(4096) as usize);
    for i in 0..channels {
        names.push(r.string(&format!("channel name {i}"))?);
    }
    let subject = r.string("subject id")?;
    let session = r.string("session id")?;
    let labels = r.bytes(trials as usize, "labels")?.to_vec();
    let payload = r.bytes(samples * 4, "sample payload")?;
    if r.remaining() > 0 {
        return Err(Error::Malformed {
            path: path.into(),
            detail: format!("{} trailing bytes after the payload", r.remaining()),
        });
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let set = EpochSet::new(data, labels, timesteps as usize, fs, names).map_err(|e| Error::Malformed {
        path: path.into(),
        detail: e.to_string(),
    })?;
    Ok(set.with_ids(subject, session))
}

/// Writes through a temporary file and a rename, so a failed write never
/// leaves a partial file at `path`.
pub fn save_epochs(set: &EpochSet, path: &Path) -> Result<()> {
    write_atomic(path, &encode_epochs(set)?)
}

pub fn load_epochs(path: &Path) -> Result<EpochSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_epochs(&bytes, path)
}
