use std::fmt::Write as _;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};

/// The 31 motor-region channels used for the OpenBMI recordings.
pub const OPENBMI_CHANNELS: [&str; 31] = [
    "FC5", "FC3", "FC1", "FC2", "FC4", "FC6", "T7", "C5", "C3", "C1", "Cz", "C2", "C4", "C6", "T8", "TP7", "CP5",
    "CP3", "CP1", "CPz", "CP2", "CP4", "CP6", "TP8", "P7", "P3", "P1", "Pz", "P2", "P4", "P8",
];

/// 20 channels of the BCIC IV 2a montage (the 22-channel cap minus Fz and POz).
pub const BCIC2A_CHANNELS: [&str; 20] = [
    "FC3", "FC1", "FCz", "FC2", "FC4", "C5", "C3", "C1", "Cz", "C2", "C4", "C6", "CP3", "CP1", "CPz", "CP2", "CP4",
    "P1", "Pz", "P2",
];

/// Assignment of channel names to cells of an `rows x cols` scalp grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Montage {
    rows: usize,
    cols: usize,
    placements: IndexMap<String, (usize, usize)>,
}

impl Montage {
    pub fn new(
        rows: usize,
        cols: usize,
        placements: impl IntoIterator<Item = (String, (usize, usize))>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(format!("montage grid {rows}x{cols} is empty")));
        }
        let mut map: IndexMap<String, (usize, usize)> = IndexMap::new();
        let mut used: IndexMap<(usize, usize), String> = IndexMap::new();
        for (name, (r, c)) in placements {
            if r >= rows || c >= cols {
                return Err(Error::invalid(format!(
                    "channel {name} at ({r},{c}) lies outside the {rows}x{cols} grid"
                )));
            }
            if let Some(other) = used.get(&(r, c)) {
                return Err(Error::invalid(format!(
                    "channels {other} and {name} share cell ({r},{c})"
                )));
            }
            if map.contains_key(&name) {
                return Err(Error::invalid(format!("channel {name} is placed twice")));
            }
            used.insert((r, c), name.clone());
            map.insert(name, (r, c));
        }
        Ok(Montage {
            rows,
            cols,
            placements: map,
        })
    }

    /// 6x9 grid for the OpenBMI channel set, laid out from 10-20 scalp
    /// geometry: rows 1-4 hold the FC, T/C, TP/CP and P strips, rows 0 and
    /// 5 stay empty; column 4 is the midline.
    pub fn openbmi31() -> Self {
        let rows: [(usize, &[(&str, usize)]); 4] = [
            (
                1,
                &[("FC5", 1), ("FC3", 2), ("FC1", 3), ("FC2", 5), ("FC4", 6), ("FC6", 7)],
            ),
            (
                2,
                &[
                    ("T7", 0),
                    ("C5", 1),
                    ("C3", 2),
                    ("C1", 3),
                    ("Cz", 4),
                    ("C2", 5),
                    ("C4", 6),
                    ("C6", 7),
                    ("T8", 8),
                ],
            ),
            (
                3,
                &[
                    ("TP7", 0),
                    ("CP5", 1),
                    ("CP3", 2),
                    ("CP1", 3),
                    ("CPz", 4),
                    ("CP2", 5),
                    ("CP4", 6),
                    ("CP6", 7),
                    ("TP8", 8),
                ],
            ),
            (
                4,
                &[
                    ("P7", 0),
                    ("P3", 2),
                    ("P1", 3),
                    ("Pz", 4),
                    ("P2", 5),
                    ("P4", 6),
                    ("P8", 8),
                ],
            ),
        ];
        Self::from_rows(6, 9, &rows)
    }

    /// The 20 BCIC IV 2a channels on the same 6x9 grid as [`Montage::openbmi31`].
    pub fn bcic20() -> Self {
        let rows: [(usize, &[(&str, usize)]); 4] = [
            (1, &[("FC3", 2), ("FC1", 3), ("FCz", 4), ("FC2", 5), ("FC4", 6)]),
            (
                2,
                &[
                    ("C5", 1),
                    ("C3", 2),
                    ("C1", 3),
                    ("Cz", 4),
                    ("C2", 5),
                    ("C4", 6),
                    ("C6", 7),
                ],
            ),
            (3, &[("CP3", 2), ("CP1", 3), ("CPz", 4), ("CP2", 5), ("CP4", 6)]),
            (4, &[("P1", 3), ("Pz", 4), ("P2", 5)]),
        ];
        Self::from_rows(6, 9, &rows)
    }

    fn from_rows(rows: usize, cols: usize, layout: &[(usize, &[(&str, usize)])]) -> Self {
        let placements = layout
            .iter()
            .flat_map(|(r, chans)| chans.iter().map(move |(name, c)| (name.to_string(), (*r, *c))));
        Self::new(rows, cols, placements).expect("built-in montage is valid")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.placements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.placements.is_empty()
    }

    pub fn position(&self, channel: &str) -> Option<(usize, usize)> {
        self.placements.get(channel).copied()
    }

    pub fn channels(&self) -> impl Iterator<Item = &str> {
        self.placements.keys().map(String::as_str)
    }

    pub fn placements(&self) -> impl Iterator<Item = (&str, (usize, usize))> {
        self.placements.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Same grid, keeping only the listed channels.
    pub fn restrict<S: AsRef<str>>(&self, channels: &[S]) -> Result<Self> {
        let mut kept = Vec::with_capacity(channels.len());
        for ch in channels {
            let ch = ch.as_ref();
            let pos = self.position(ch).ok_or_else(|| Error::MissingChannel {
                channel: ch.to_string(),
                context: "montage".into(),
            })?;
            kept.push((ch.to_string(), pos));
        }
        Self::new(self.rows, self.cols, kept)
    }

    /// Parses the line-oriented montage format: `rows=n` and `cols=m`
    /// header lines, then one `channel row col` triple per line; `#`
    /// starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let (mut rows, mut cols) = (None, None);
        let mut placements = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |what: &str| Error::Config(format!("montage line {}: {what}: {raw:?}", lineno + 1));
            if let Some((key, value)) = line.split_once('=') {
                let n: usize = value.trim().parse().map_err(|_| bad("expected an integer"))?;
                match key.trim() {
                    "rows" => rows = Some(n),
                    "cols" => cols = Some(n),
                    _ => return Err(bad("unknown header key (expected rows or cols)")),
                }
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(bad("expected `channel row col`"));
            }
            let r: usize = fields[1].parse().map_err(|_| bad("row is not an integer"))?;
            let c: usize = fields[2].parse().map_err(|_| bad("col is not an integer"))?;
            placements.push((fields[0].to_string(), (r, c)));
        }
        let rows = rows.ok_or_else(|| Error::Config("montage is missing `rows=`".into()))?;
        let cols = cols.ok_or_else(|| Error::Config("montage is missing `cols=`".into()))?;
        Self::new(rows, cols, placements)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("rows={}\ncols={}\n", self.rows, self.cols);
        for (name, (r, c)) in &self.placements {
            let _ = writeln!(s, "{name} {r} {c}");
        }
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_montages_hold_their_channel_lists() {
        let m = Montage::openbmi31();
        assert_eq!((m.rows(), m.cols(), m.len()), (6, 9, 31));
        assert!(OPENBMI_CHANNELS.iter().all(|c| m.position(c).is_some()));
        let b = Montage::bcic20();
        assert_eq!(b.len(), 20);
        assert!(BCIC2A_CHANNELS.iter().all(|c| b.position(c).is_some()));
    }

    #[test]
    fn rejects_collisions_and_out_of_range() {
        let dup = vec![("A".to_string(), (0, 0)), ("B".to_string(), (0, 0))];
        assert!(Montage::new(2, 2, dup).is_err());
        assert!(Montage::new(2, 2, vec![("A".to_string(), (2, 0))]).is_err());
    }

    #[test]
    fn text_round_trip_and_comments() {
        let m = Montage::openbmi31();
        assert_eq!(Montage::parse(&m.to_text()).unwrap(), m);
        let parsed = Montage::parse("# grid\nrows=2\ncols = 3 # inline\nC3 0 1\n\nC4 1 2\n").unwrap();
        assert_eq!(parsed.position("C4"), Some((1, 2)));
        assert!(Montage::parse("rows=2\nC3 0 1\n").is_err());
        assert!(Montage::parse("rows=2\ncols=2\nC3 0\n").is_err());
    }
}
