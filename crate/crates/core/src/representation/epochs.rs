use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::representation::Montage;
use crate::tensor::Tensor;

/// Labeled two-class EEG trials stored as `[trials, channels, timesteps]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochSet {
    data: Vec<f32>,
    trials: usize,
    timesteps: usize,
    labels: Vec<u8>,
    fs: f64,
    channel_names: Vec<String>,
    pub subject_id: String,
    pub session_id: String,
}

impl EpochSet {
    pub fn new(data: Vec<f32>, labels: Vec<u8>, timesteps: usize, fs: f64, channel_names: Vec<String>) -> Result<Self> {
        let trials = labels.len();
        let channels = channel_names.len();
        if channels == 0 || timesteps == 0 {
            return Err(Error::Data(
                "epoch set needs at least one channel and one sample".into(),
            ));
        }
        if data.len() != trials * channels * timesteps {
            return Err(Error::Data(format!(
                "epoch data holds {} samples, expected {trials} x {channels} x {timesteps}",
                data.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Data(format!("label {bad} is not 0 or 1")));
        }
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(Error::Data(format!("sampling rate {fs} must be positive")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("epoch data contains non-finite samples".into()));
        }
        Ok(EpochSet {
            data,
            trials,
            timesteps,
            labels,
            fs,
            channel_names,
            subject_id: String::new(),
            session_id: String::new(),
        })
    }

    pub fn with_ids(mut self, subject: impl Into<String>, session: impl Into<String>) -> Self {
        self.subject_id = subject.into();
        self.session_id = session.into();
        self
    }

    pub fn trials(&self) -> usize {
        self.trials
    }

    pub fn channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// `[channels, timesteps]` block of one trial.
    pub fn trial(&self, i: usize) -> &[f32] {
        let len = self.channels() * self.timesteps;
        &self.data[i * len..(i + 1) * len]
    }

    /// New set holding the listed trials, in the listed order.
    pub fn subset(&self, indices: &[usize]) -> EpochSet {
        let mut data = Vec::with_capacity(indices.len() * self.channels() * self.timesteps);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.trial(i));
            labels.push(self.labels[i]);
        }
        EpochSet {
            data,
            trials: indices.len(),
            labels,
            ..self.empty_like()
        }
    }

    fn empty_like(&self) -> EpochSet {
        EpochSet {
            data: Vec::new(),
            trials: 0,
            timesteps: self.timesteps,
            labels: Vec::new(),
            fs: self.fs,
            channel_names: self.channel_names.clone(),
            subject_id: self.subject_id.clone(),
            session_id: self.session_id.clone(),
        }
    }

    /// Concatenates sets with identical channels, length and rate.
    pub fn concat(sets: &[&EpochSet]) -> Result<EpochSet> {
        let first = sets
            .first()
            .ok_or_else(|| Error::Data("concat of zero epoch sets".into()))?;
        let mut out = first.empty_like();
        for s in sets {
            if s.channel_names != first.channel_names || s.timesteps != first.timesteps || s.fs != first.fs {
                return Err(Error::Data(format!(
                    "cannot concatenate {}/{} with {}/{}: layouts differ",
                    s.subject_id, s.session_id, first.subject_id, first.session_id
                )));
            }
            out.data.extend_from_slice(&s.data);
            out.labels.extend_from_slice(&s.labels);
            out.trials += s.trials;
        }
        Ok(out)
    }
}

/// Trials on the scalp grid: `[trials, timesteps, rows, cols]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid3D {
    data: Vec<f32>,
    trials: usize,
    timesteps: usize,
    rows: usize,
    cols: usize,
}

impl Grid3D {
    pub fn trials(&self) -> usize {
        self.trials
    }

    /// `(timesteps, rows, cols)`
    pub fn sample_shape(&self) -> (usize, usize, usize) {
        (self.timesteps, self.rows, self.cols)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn cell(&self, trial: usize, row: usize, col: usize) -> Vec<f32> {
        let plane = self.rows * self.cols;
        (0..self.timesteps)
            .map(|t| self.data[trial * self.timesteps * plane + t * plane + row * self.cols + col])
            .collect()
    }

    /// New grid holding the listed trials, in the listed order.
    pub fn subset(&self, indices: &[usize]) -> Grid3D {
        let len = self.timesteps * self.rows * self.cols;
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend_from_slice(&self.data[i * len..(i + 1) * len]);
        }
        Grid3D {
            data,
            trials: indices.len(),
            ..self.empty_like()
        }
    }

    fn empty_like(&self) -> Grid3D {
        Grid3D {
            data: Vec::new(),
            trials: 0,
            timesteps: self.timesteps,
            rows: self.rows,
            cols: self.cols,
        }
    }

    /// Network input batch `[N, 1, T, H, W]` for the listed trials.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let len = self.timesteps * self.rows * self.cols;
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend(self.data[i * len..(i + 1) * len].iter().map(|&v| v as f64));
        }
        Tensor::new(vec![indices.len(), 1, self.timesteps, self.rows, self.cols], data)
            .expect("grid batch shape is consistent")
    }
}

/// Places every channel's time series on its montage cell; unplaced cells
/// are zero.
pub fn map_to_3d(epochs: &EpochSet, montage: &Montage) -> Result<Grid3D> {
    let missing: Vec<&str> = epochs
        .channel_names()
        .iter()
        .filter(|c| montage.position(c).is_none())
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingChannel {
            channel: missing.join(", "),
            context: "montage".into(),
        });
    }
    let (t, rows, cols) = (epochs.timesteps(), montage.rows(), montage.cols());
    let plane = rows * cols;
    let mut data = vec![0.0f32; epochs.trials() * t * plane];
    let cells: Vec<usize> = epochs
        .channel_names()
        .iter()
        .map(|c| {
            let (r, col) = montage.position(c).expect("checked above");
            r * cols + col
        })
        .collect();
    for trial in 0..epochs.trials() {
        let src = epochs.trial(trial);
        let dst = &mut data[trial * t * plane..(trial + 1) * t * plane];
        for (ch, &cell) in cells.iter().enumerate() {
            for (ti, &v) in src[ch * t..(ch + 1) * t].iter().enumerate() {
                dst[ti * plane + cell] = v;
            }
        }
    }
    Ok(Grid3D {
        data,
        trials: epochs.trials(),
        timesteps: t,
        rows,
        cols,
    })
}

/// Number of windows of length `window` taken every `step` samples from
/// a trial of `t` samples.
pub fn windows_per_trial(t: usize, window: usize, step: usize) -> usize {
    if window > t || window == 0 || step == 0 {
        0
    } else {
        (t - window) / step + 1
    }
}

/// Cuts every trial into overlapping windows; windows inherit their
/// trial's label and are ordered trial-major, offset-minor.
pub fn slide_windows(epochs: &EpochSet, window: usize, step: usize) -> Result<EpochSet> {
    if window == 0 || step == 0 {
        return Err(Error::invalid(format!(
            "window length {window} and step {step} must be >= 1"
        )));
    }
    let t = epochs.timesteps();
    if window > t {
        return Err(Error::invalid(format!(
            "window length {window} exceeds trial length {t}"
        )));
    }
    let per = windows_per_trial(t, window, step);
    let ch = epochs.channels();
    let mut data = Vec::with_capacity(epochs.trials() * per * ch * window);
    let mut labels = Vec::with_capacity(epochs.trials() * per);
    for trial in 0..epochs.trials() {
        let src = epochs.trial(trial);
        for k in 0..per {
            let off = k * step;
            for c in 0..ch {
                data.extend_from_slice(&src[c * t + off..c * t + off + window]);
            }
            labels.push(epochs.labels()[trial]);
        }
    }
    Ok(EpochSet {
        data,
        trials: labels.len(),
        timesteps: window,
        labels,
        ..epochs.empty_like()
    })
}

/// Electrode subsets compared in the channel-selection sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelScheme {
    All,
    S1,
    S2,
    S3,
    S4,
}

impl ChannelScheme {
    pub const ALL: [ChannelScheme; 5] = [Self::All, Self::S1, Self::S2, Self::S3, Self::S4];

    /// Channel names of the scheme; `None` for [`ChannelScheme::All`].
    pub fn channels(self) -> Option<&'static [&'static str]> {
        match self {
            Self::All => None,
            Self::S1 => Some(&[
                "FC1", "FC2", "FC3", "FC4", "Cz", "C1", "C2", "C3", "C4", "CPz", "CP1", "CP2", "CP3", "CP4",
            ]),
            Self::S2 => Some(&["Cz", "CPz", "FC1", "FC2", "C1", "C2", "CP1", "CP2"]),
            Self::S3 => Some(&["Cz", "CPz", "FC3", "FC4", "C3", "C4", "CP3", "CP4"]),
            Self::S4 => Some(&["Cz", "CPz", "FC5", "FC6", "C5", "C6", "CP5", "CP6"]),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::All => "all",
            Self::S1 => "s1",
            Self::S2 => "s2",
            Self::S3 => "s3",
            Self::S4 => "s4",
        }
    }
}

impl fmt::Display for ChannelScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ChannelScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown channel scheme {s:?} (expected all, s1, s2, s3 or s4)")))
    }
}

/// Keeps the scheme's channels, preserving the input channel order.
pub fn select_channels(epochs: &EpochSet, scheme: ChannelScheme) -> Result<EpochSet> {
    let Some(wanted) = scheme.channels() else {
        return Ok(epochs.clone());
    };
    if let Some(missing) = wanted.iter().find(|w| !epochs.channel_names().iter().any(|c| c == *w)) {
        return Err(Error::MissingChannel {
            channel: missing.to_string(),
            context: format!("epoch set (scheme {scheme})"),
        });
    }
    let keep: Vec<usize> = epochs
        .channel_names()
        .iter()
        .enumerate()
        .filter(|(_, c)| wanted.contains(&c.as_str()))
        .map(|(i, _)| i)
        .collect();
    let t = epochs.timesteps();
    let mut data = Vec::with_capacity(epochs.trials() * keep.len() * t);
    for trial in 0..epochs.trials() {
        let src = epochs.trial(trial);
        for &c in &keep {
            data.extend_from_slice(&src[c * t..(c + 1) * t]);
        }
    }
    Ok(EpochSet {
        data,
        trials: epochs.trials(),
        labels: epochs.labels().to_vec(),
        channel_names: keep.iter().map(|&c| epochs.channel_names()[c].clone()).collect(),
        ..epochs.empty_like()
    })
}

/// Network-ready windows with labels and the index of the trial each
/// window was cut from.
#[derive(Clone, Debug, PartialEq)]
pub struct Samples {
    pub grid: Grid3D,
    pub labels: Vec<f64>,
    pub trial_ids: Vec<usize>,
}

impl Samples {
    /// Maps `epochs` onto `montage`, optionally cutting `(window, step)`
    /// windows first.
    pub fn from_epochs(epochs: &EpochSet, montage: &Montage, windowing: Option<(usize, usize)>) -> Result<Samples> {
        let (set, per) = match windowing {
            Some((w, s)) => (
                slide_windows(epochs, w, s)?,
                windows_per_trial(epochs.timesteps(), w, s),
            ),
            None => (epochs.clone(), 1),
        };
        let grid = map_to_3d(&set, montage)?;
        Ok(Samples {
            grid,
            labels: set.labels().iter().map(|&l| f64::from(l)).collect(),
            trial_ids: (0..set.trials()).map(|i| i / per).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Samples {
        Samples {
            grid: self.grid.subset(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            trial_ids: indices.iter().map(|&i| self.trial_ids[i]).collect(),
        }
    }

    /// Windows whose trial id is in `trials`, in sample order.
    pub fn select_trials(&self, trials: &[usize]) -> Samples {
        let keep: std::collections::HashSet<usize> = trials.iter().copied().collect();
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep.contains(&self.trial_ids[i])).collect();
        self.subset(&idx)
    }

    /// Concatenates samples; trial ids of later parts are offset so they
    /// stay distinct.
    pub fn concat(parts: &[&Samples]) -> Result<Samples> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Data("concat of zero sample sets".into()))?;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut trial_ids = Vec::new();
        let mut offset = 0;
        for p in parts {
            if p.grid.sample_shape() != first.grid.sample_shape() {
                return Err(Error::Data(format!(
                    "cannot concatenate samples of shape {:?} and {:?}",
                    p.grid.sample_shape(),
                    first.grid.sample_shape()
                )));
            }
            data.extend_from_slice(&p.grid.data);
            labels.extend_from_slice(&p.labels);
            trial_ids.extend(p.trial_ids.iter().map(|t| t + offset));
            offset += p.trial_ids.iter().max().map_or(0, |m| m + 1);
        }
        Ok(Samples {
            grid: Grid3D {
                data,
                trials: labels.len(),
                ..first.grid.empty_like()
            },
            labels,
            trial_ids,
        })
    }

    /// Network input `[N,1,T,H,W]` and labels for the listed samples.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<f64>) {
        (
            self.grid.batch(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}
