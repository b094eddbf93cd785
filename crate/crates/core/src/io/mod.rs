//! Epoch files, checkpoints, dataset manifests, run configuration and run
//! directories. Every file is written to a temporary sibling first and
//! renamed into place.

mod checkpoint;
mod config;
mod epochfile;
mod manifest;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{RunConfig, Windowing};
pub use epochfile::{decode_epochs, encode_epochs, load_epochs, save_epochs, EPOCH_MAGIC, EPOCH_VERSION};
pub use manifest::{EntryKey, Manifest, Phase};

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::training::History;

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let file = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", file.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// Bounds-checked little-endian cursor; running short is a truncation
/// error naming the field.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Reader { bytes, pos: 0, path }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn bytes(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Truncated {
                path: self.path.into(),
                detail: format!(
                    "{what} needs {n} bytes at offset {}, {} left",
                    self.pos,
                    self.remaining()
                ),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.bytes(N, what)?.try_into().expect("length checked"))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    pub(crate) fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array(what)?))
    }

    pub(crate) fn string(&mut self, what: &str) -> Result<String> {
        let n = u16::from_le_bytes(self.array(what)?) as usize;
        let raw = self.bytes(n, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Malformed {
            path: self.path.into(),
            detail: format!("{what} is not valid UTF-8"),
        })
    }
}

/// Output directory of one command: config snapshot, per-epoch log,
/// checkpoint and report.
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub const CONFIG: &'static str = "config.toml";
    pub const LOG: &'static str = "log.tsv";
    pub const CHECKPOINT: &'static str = "checkpoint.dadl";
    pub const REPORT: &'static str = "report.txt";

    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(RunDir { root })
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.root.join(file)
    }

    pub fn write_config(&self, cfg: &RunConfig) -> Result<()> {
        write_atomic(&self.path(Self::CONFIG), cfg.to_toml()?.as_bytes())
    }

    pub fn write_log(&self, history: &History) -> Result<()> {
        write_atomic(&self.path(Self::LOG), history.to_text().as_bytes())
    }

    pub fn write_checkpoint(&self, params: &ParamSet) -> Result<()> {
        save_checkpoint(params, &self.path(Self::CHECKPOINT))
    }

    pub fn write_report(&self, text: &str) -> Result<()> {
        write_atomic(&self.path(Self::REPORT), text.as_bytes())
    }
}
