//! Optimizer, early stopping, supervised pretraining and the three-stage
//! adaptation procedure.

mod adapt;
mod optim;
mod pretrain;

pub use adapt::{adapt_all, adapt_dda, run_mode, AdaptReport, FoldOutcome, TransferMode};
pub use optim::{nadam_step, EarlyStopper, NadamState};
pub use pretrain::{evaluate_model, extract_all, predict_all, pretrain};

use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::MmdConfig;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Epochs without strict validation improvement before stopping.
    pub patience: usize,
    /// Pretraining epoch budget.
    pub max_epochs: usize,
    pub batch_size: usize,
    pub lambda_mmd: f64,
    pub seed: u64,
    /// Epoch budgets of the source, alignment and fine-tune stages.
    pub stage_epochs: [usize; 3],
    /// Keep the classification term during the alignment stage.
    pub joint_stage2: bool,
    /// Fine-tune the buffer layer together with the classifiers in the
    /// last stage (FT and DDA alike).
    pub finetune_buffer: bool,
    /// Folds of the target split into fine-tune and test data.
    pub folds: usize,
    /// Fraction of trials held out for validation inside a training split.
    pub val_fraction: f64,
    pub buffer_dim: usize,
    pub adapter_dim: usize,
    pub mmd: MmdConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            patience: 30,
            max_epochs: 100,
            batch_size: 32,
            lambda_mmd: 1.0,
            seed: 0,
            stage_epochs: [100, 50, 50],
            joint_stage2: false,
            finetune_buffer: true,
            folds: 5,
            val_fraction: 0.2,
            buffer_dim: 64,
            adapter_dim: 32,
            mmd: MmdConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lr > 0.0) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {b}"));
            }
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be > 0, got {}", self.eps));
        }
        if self.patience < 1 {
            return bad("patience must be >= 1".into());
        }
        if self.batch_size < 2 {
            return bad(format!(
                "batch_size must be >= 2 for batch statistics, got {}",
                self.batch_size
            ));
        }
        if !(self.lambda_mmd >= 0.0) {
            return bad(format!("lambda_mmd must be >= 0, got {}", self.lambda_mmd));
        }
        if self.folds < 2 {
            return bad(format!("folds must be >= 2, got {}", self.folds));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("val_fraction must lie in (0, 1), got {}", self.val_fraction));
        }
        if self.buffer_dim == 0 || self.adapter_dim == 0 {
            return bad("buffer_dim and adapter_dim must be >= 1".into());
        }
        self.mmd.validate()
    }
}

/// Independent child seed of `seed` for the stream `tag`.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag.wrapping_add(1));
    rng.next_u64()
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// `stage/split`, e.g. `pretrain/val` or `fold2.finetune/train`.
    pub split: String,
    pub loss: f64,
    pub acc: Option<f64>,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let acc = self.acc.map_or("NA".to_string(), |a| format!("{a:.6}"));
        write!(f, "{}\t{}\t{:.9}\t{}", self.epoch, self.split, self.loss, acc)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn push(&mut self, epoch: usize, split: impl Into<String>, loss: f64, acc: Option<f64>) {
        self.records.push(EpochRecord {
            epoch,
            split: split.into(),
            loss,
            acc,
        });
    }

    pub fn extend(&mut self, other: History) {
        self.records.extend(other.records);
    }

    /// Records of one split in epoch order.
    pub fn split(&self, split: &str) -> Vec<&EpochRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    /// Number of epochs logged for `split`.
    pub fn epochs(&self, split: &str) -> usize {
        self.split(split).len()
    }

    /// `epoch split loss acc`, tab separated, one record per line.
    pub fn to_text(&self) -> String {
        let mut out = String::from("epoch\tsplit\tloss\tacc\n");
        for r in &self.records {
            out.push_str(&r.to_string());
            out.push('\n');
        }
        out
    }
}

/// Shuffled mini-batches of `0..n`; a trailing batch of one is folded into
/// the previous batch so batch statistics stay defined.
pub(crate) fn minibatches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().expect("nonempty");
        batches.last_mut().expect("nonempty").extend(last);
    }
    batches
}

/// Splits the distinct trial ids of `trial_ids` into `(train, val)` trial
/// sets, holding out `fraction` of the trials (at least one, and leaving at
/// least one for training).
pub(crate) fn split_trials(trial_ids: &[usize], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    use rand::seq::SliceRandom;
    let mut trials: Vec<usize> = trial_ids.to_vec();
    trials.sort_unstable();
    trials.dedup();
    if trials.len() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 trials to hold out validation data, got {}",
            trials.len()
        )));
    }
    trials.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((trials.len() as f64 * fraction).round() as usize).clamp(1, trials.len() - 1);
    let val = trials[..n_val].to_vec();
    let train = trials[n_val..].to_vec();
    Ok((train, val))
}
