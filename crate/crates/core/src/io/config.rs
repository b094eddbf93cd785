//! Run configuration in TOML: `[synth]`, `[model]`, `[train]`,
//! `[train.mmd]` and `[protocol]` sections. Missing keys take their
//! defaults; unknown keys are rejected with the list of valid ones.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::ProtocolConfig;
use crate::model::DadlNetConfig;
use crate::representation::{SynthConfig, INTER_STEP_FRACTION, INTRA_STEP_FRACTION};
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Windowing {
    /// Window length in samples; the whole trial when absent.
    pub window: Option<usize>,
    pub intra_step_fraction: f64,
    pub inter_step_fraction: f64,
}

impl Default for Windowing {
    fn default() -> Self {
        Windowing {
            window: None,
            intra_step_fraction: INTRA_STEP_FRACTION,
            inter_step_fraction: INTER_STEP_FRACTION,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub model: DadlNetConfig,
    pub train: TrainConfig,
    pub protocol: Windowing,
}

impl RunConfig {
    /// Small synthetic setup that trains in minutes on one core: 128 Hz,
    /// one-second trials, narrow filters.
    pub fn desk() -> Self {
        RunConfig {
            synth: SynthConfig {
                n_subjects: 4,
                sessions: 2,
                trials: 50,
                fs: 128.0,
                timesteps: 128,
                class_gap: 1.0,
                domain_shift: 1.0,
                ..SynthConfig::default()
            },
            model: DadlNetConfig {
                fs: 128.0,
                filters: vec![8, 16, 16, 16],
                temporal_pools: vec![4, 2, 2, 1],
                ..DadlNetConfig::default()
            },
            train: TrainConfig {
                max_epochs: 30,
                batch_size: 16,
                ..TrainConfig::default()
            },
            protocol: Windowing::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        for (name, f) in [
            ("intra_step_fraction", self.protocol.intra_step_fraction),
            ("inter_step_fraction", self.protocol.inter_step_fraction),
        ] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("protocol.{name} must lie in (0, 1], got {f}")));
            }
        }
        Ok(())
    }

    pub fn protocol(&self) -> ProtocolConfig {
        ProtocolConfig {
            model: self.model.clone(),
            train: self.train.clone(),
            window: self.protocol.window,
            intra_step_fraction: self.protocol.intra_step_fraction,
            inter_step_fraction: self.protocol.inter_step_fraction,
        }
    }
}
