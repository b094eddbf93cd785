//! Synthetic lateralized motor-imagery trials for desk-scale runs.
//!
//! Each channel carries a sinusoid at `freq_hz` over pink noise. The
//! sinusoid is amplified by `class_gap` on left-hemisphere channels for
//! class 0 and on right-hemisphere channels for class 1. Subjects differ
//! by a hemisphere gain imbalance (random sign, magnitude in [0.5, 1.5)),
//! per-channel gains and a phase offset, all scaled by `domain_shift`.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::representation::{EpochSet, OPENBMI_CHANNELS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_subjects: usize,
    /// Sessions recorded per subject.
    pub sessions: usize,
    /// Trials per subject and session; must be even.
    pub trials: usize,
    pub channels: Vec<String>,
    pub fs: f64,
    pub timesteps: usize,
    pub class_gap: f64,
    pub domain_shift: f64,
    /// Extra per-channel gain jitter between sessions of one subject.
    pub session_shift: f64,
    pub seed: u64,
    /// Channels carrying the class signal; all lateral channels when absent.
    pub informative: Option<Vec<String>>,
    pub freq_hz: f64,
    pub base_amplitude: f64,
    pub noise_std: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_subjects: 2,
            sessions: 1,
            trials: 100,
            channels: OPENBMI_CHANNELS.iter().map(|s| s.to_string()).collect(),
            fs: 400.0,
            timesteps: 400,
            class_gap: 1.0,
            domain_shift: 0.0,
            session_shift: 0.0,
            seed: 0,
            informative: None,
            freq_hz: 10.0,
            base_amplitude: 0.5,
            noise_std: 1.0,
        }
    }
}

/// Scalp side of a 10-20 channel name: odd index is left, even is right,
/// `z` is the midline.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Hemisphere {
    Left,
    Midline,
    Right,
}

pub fn hemisphere(channel: &str) -> Hemisphere {
    let digits: String = channel.chars().rev().take_while(|c| c.is_ascii_digit()).collect();
    match digits.chars().next() {
        Some(d) if d.to_digit(10).is_some_and(|v| v % 2 == 1) => Hemisphere::Left,
        Some(_) => Hemisphere::Right,
        None => Hemisphere::Midline,
    }
}

/// Generates `n_subjects * sessions` epoch sets, subject-major.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<EpochSet>> {
    if cfg.trials == 0 || !cfg.trials.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "synthetic trial count {} must be even and positive for class balance",
            cfg.trials
        )));
    }
    if cfg.class_gap < 0.0 || cfg.domain_shift < 0.0 || cfg.session_shift < 0.0 || cfg.noise_std < 0.0 {
        return Err(Error::invalid("synthetic gaps, shifts and noise must be non-negative"));
    }
    if cfg.channels.is_empty() || cfg.timesteps == 0 || cfg.n_subjects == 0 || cfg.sessions == 0 {
        return Err(Error::invalid(
            "synthetic config needs channels, timesteps, subjects and sessions",
        ));
    }
    if !(cfg.fs > 0.0) {
        return Err(Error::invalid("synthetic sampling rate must be positive"));
    }
    let mut out = Vec::with_capacity(cfg.n_subjects * cfg.sessions);
    for s in 0..cfg.n_subjects {
        let mut subj_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        subj_rng.set_stream(1 + s as u64);
        let subject = SubjectShift::draw(cfg, &mut subj_rng);
        for sess in 0..cfg.sessions {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(((1 + s as u64) << 16) | (1 + sess as u64));
            out.push(generate_session(cfg, &subject, &mut rng, s, sess)?);
        }
    }
    Ok(out)
}

struct SubjectShift {
    gains: Vec<f64>,
    phase: f64,
}

impl SubjectShift {
    fn draw(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Self {
        // magnitude bounded away from zero so every subject is shifted
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let imbalance = sign * rng.random_range(0.5..1.5);
        let phase = cfg.domain_shift * rng.random_range(-PI..PI);
        let gains = cfg
            .channels
            .iter()
            .map(|c| {
                let jitter: f64 = rng.sample(StandardNormal);
                let side = match hemisphere(c) {
                    Hemisphere::Left => 1.0,
                    Hemisphere::Right => -1.0,
                    Hemisphere::Midline => 0.0,
                };
                (cfg.domain_shift * (0.5 * side * imbalance + 0.25 * jitter)).exp()
            })
            .collect();
        SubjectShift { gains, phase }
    }
}

fn generate_session(
    cfg: &SynthConfig,
    subject: &SubjectShift,
    rng: &mut ChaCha8Rng,
    s: usize,
    sess: usize,
) -> Result<EpochSet> {
    let ch = cfg.channels.len();
    let t = cfg.timesteps;
    let session_gain: Vec<f64> = (0..ch)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            (cfg.session_shift * 0.25 * z).exp()
        })
        .collect();
    let mut labels: Vec<u8> = (0..cfg.trials).map(|i| u8::from(i >= cfg.trials / 2)).collect();
    labels.shuffle(rng);

    let modulated: Vec<Hemisphere> = cfg
        .channels
        .iter()
        .map(|c| match &cfg.informative {
            Some(list) if !list.iter().any(|x| x == c) => Hemisphere::Midline,
            _ => hemisphere(c),
        })
        .collect();

    let omega = 2.0 * PI * cfg.freq_hz / cfg.fs;
    let mut data = Vec::with_capacity(cfg.trials * ch * t);
    for &label in &labels {
        let active = if label == 0 {
            Hemisphere::Left
        } else {
            Hemisphere::Right
        };
        let phase = subject.phase + rng.random_range(-PI / 2.0..PI / 2.0);
        for c in 0..ch {
            let amp = cfg.base_amplitude + if modulated[c] == active { cfg.class_gap } else { 0.0 };
            let gain = subject.gains[c] * session_gain[c];
            let mut pink = PinkNoise::default();
            for _ in 0..64 {
                pink.next(rng);
            }
            for i in 0..t {
                let v = amp * (omega * i as f64 + phase).sin() + cfg.noise_std * pink.next(rng);
                data.push((gain * v) as f32);
            }
        }
    }
    Ok(EpochSet::new(data, labels, t, cfg.fs, cfg.channels.clone())?
        .with_ids(format!("S{:02}", s + 1), format!("{}", sess + 1)))
}

/// Paul Kellet's three-pole 1/f approximation, scaled to roughly unit
/// variance.
#[derive(Default)]
struct PinkNoise {
    b: [f64; 3],
}

impl PinkNoise {
    fn next(&mut self, rng: &mut ChaCha8Rng) -> f64 {
        let white: f64 = rng.sample(StandardNormal);
        self.b[0] = 0.99765 * self.b[0] + white * 0.0990460;
        self.b[1] = 0.96300 * self.b[1] + white * 0.2965164;
        self.b[2] = 0.57000 * self.b[2] + white * 1.0526913;
        (self.b[0] + self.b[1] + self.b[2] + white * 0.1848) / 3.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hemisphere_from_name() {
        assert_eq!(hemisphere("C3"), Hemisphere::Left);
        assert_eq!(hemisphere("FC4"), Hemisphere::Right);
        assert_eq!(hemisphere("CPz"), Hemisphere::Midline);
        assert_eq!(hemisphere("TP7"), Hemisphere::Left);
        assert_eq!(hemisphere("T8"), Hemisphere::Right);
    }

    #[test]
    fn odd_trial_count_is_rejected() {
        let cfg = SynthConfig {
            trials: 7,
            ..SynthConfig::default()
        };
        assert!(synth_generate(&cfg).is_err());
    }
}
