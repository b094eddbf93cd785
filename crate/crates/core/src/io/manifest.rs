//! Dataset manifest, one entry per line, `#` starts a comment:
//!
//! ```text
//! name openbmi
//! montage montage.txt
//! epochs S01 1 nonfeedback S01_s1_off.eeg3
//! epochs S01 1 feedback    S01_s1_on.eeg3
//! ```
//!
//! Relative paths resolve against the manifest's directory. Phases
//! `train`/`nonfeedback` form a subject's training pool and
//! `test`/`feedback` its test recording.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::evaluation::{Dataset, SubjectData};
use crate::representation::{EpochSet, Montage};

use super::{load_epochs, write_atomic};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Train,
    Test,
    NonFeedback,
    Feedback,
}

impl Phase {
    pub fn is_training(self) -> bool {
        matches!(self, Phase::Train | Phase::NonFeedback)
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Test => "test",
            Phase::NonFeedback => "nonfeedback",
            Phase::Feedback => "feedback",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Phase::Train, Phase::Test, Phase::NonFeedback, Phase::Feedback]
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown phase {s:?} (expected train, test, nonfeedback or feedback)"
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntryKey {
    pub subject: String,
    pub session: String,
    pub phase: Phase,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub name: String,
    pub montage: PathBuf,
    /// Sorted by subject, session and phase.
    pub entries: BTreeMap<EntryKey, PathBuf>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut name = None;
        let mut montage = None;
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |what: String| Error::Config(format!("manifest line {}: {what}", lineno + 1));
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                ["name", n] => name = Some(n.to_string()),
                ["montage", p] => montage = Some(PathBuf::from(p)),
                ["epochs", subject, session, phase, path] => {
                    let key = EntryKey {
                        subject: subject.to_string(),
                        session: session.to_string(),
                        phase: phase.parse().map_err(|e: Error| bad(e.to_string()))?,
                    };
                    if entries.insert(key, PathBuf::from(path)).is_some() {
                        return Err(bad(format!("duplicate entry for {subject} {session} {phase}")));
                    }
                }
                _ => {
                    return Err(bad(format!(
                        "expected `name <n>`, `montage <path>` or `epochs <subject> <session> <phase> <path>`: {raw:?}"
                    )))
                }
            }
        }
        Ok(Manifest {
            name: name.ok_or_else(|| Error::Config("manifest has no `name` line".into()))?,
            montage: montage.ok_or_else(|| Error::Config("manifest has no `montage` line".into()))?,
            entries,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("name {}\nmontage {}\n", self.name, self.montage.display());
        for (k, p) in &self.entries {
            let _ = writeln!(s, "epochs {} {} {} {}", k.subject, k.session, k.phase, p.display());
        }
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &Path| {
            if p.is_relative() {
                base.join(p)
            } else {
                p.to_path_buf()
            }
        };
        m.montage = resolve(&m.montage);
        for p in m.entries.values_mut() {
            *p = resolve(p);
        }
        for p in std::iter::once(&m.montage).chain(m.entries.values()) {
            if !p.is_file() {
                return Err(Error::Config(format!(
                    "manifest {} references missing file {}",
                    path.display(),
                    p.display()
                )));
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    /// Loads every referenced file and groups them per subject.
    pub fn load_dataset(&self) -> Result<Dataset> {
        let montage = Montage::load(&self.montage)?;
        let mut per_subject: BTreeMap<&str, (Vec<EpochSet>, Vec<EpochSet>)> = BTreeMap::new();
        for (k, p) in &self.entries {
            let set = load_epochs(p)?;
            let slot = per_subject.entry(k.subject.as_str()).or_default();
            if k.phase.is_training() {
                slot.0.push(set);
            } else {
                slot.1.push(set);
            }
        }
        let subjects = per_subject
            .into_iter()
            .map(|(id, (train, test))| {
                let join = |sets: &[EpochSet], role: &str| {
                    if sets.is_empty() {
                        return Err(Error::Data(format!(
                            "missing session: subject {id} has no {role} recording"
                        )));
                    }
                    Ok(EpochSet::concat(&sets.iter().collect::<Vec<_>>())?.with_ids(id, role))
                };
                Ok(SubjectData {
                    id: id.to_string(),
                    train: join(&train, "train")?,
                    test: join(&test, "test")?,
                })
            })
            .collect::<Result<_>>()?;
        Dataset::new(self.name.clone(), montage, subjects)
    }
}
