use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{build_dda, DdaHead, DomainBundle, LossWeights, BUFFER_PREFIX};
use crate::error::{Error, Result};
use crate::evaluation::{kfold_split, ConfusionCounts, MetricsReport};
use crate::model::DadlNetParams;
use crate::representation::Samples;
use crate::tensor::{Tape, Tensor};

use super::{
    derive_seed, extract_all, minibatches, nadam_step, split_trials, EarlyStopper, History, NadamState, TrainConfig,
};

const HEAD_STREAM: u64 = 10;
const SOURCE_SPLIT_STREAM: u64 = 11;
const SOURCE_STAGE_STREAM: u64 = 12;
const FOLD_STREAM: u64 = 13;
const FOLD_WORK_STREAM: u64 = 14;

/// Target-adaptation strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransferMode {
    /// Source-trained head applied to the target as is.
    Ntf,
    /// Classifiers (and buffer) fine-tuned on labeled target data, no MMD.
    Ft,
    /// MMD alignment of buffer and adapters, then the same fine-tuning as FT.
    Dda,
}

impl TransferMode {
    pub const ALL: [TransferMode; 3] = [TransferMode::Dda, TransferMode::Ft, TransferMode::Ntf];

    pub fn name(self) -> &'static str {
        match self {
            TransferMode::Dda => "dda",
            TransferMode::Ft => "ft",
            TransferMode::Ntf => "ntf",
        }
    }
}

impl fmt::Display for TransferMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransferMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dda" => Ok(TransferMode::Dda),
            "ft" => Ok(TransferMode::Ft),
            "ntf" => Ok(TransferMode::Ntf),
            _ => Err(Error::invalid(format!(
                "unknown mode {s:?}, expected one of dda, ft, ntf"
            ))),
        }
    }
}

/// Result of one target fold.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldOutcome {
    pub fold: usize,
    pub finetune_trials: Vec<usize>,
    pub test_trials: Vec<usize>,
    /// Trial-level counts on the held-out fold.
    pub counts: ConfusionCounts,
    pub align_epochs: usize,
    pub finetune_epochs: usize,
    pub head: DdaHead,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptReport {
    pub mode: TransferMode,
    pub folds: Vec<FoldOutcome>,
    pub history: History,
}

impl AdaptReport {
    /// One row per fold.
    pub fn metrics_report(&self) -> Result<MetricsReport> {
        let mut r = MetricsReport::new(format!("target adaptation, mode {}", self.mode));
        for f in &self.folds {
            r.push(format!("fold{}", f.fold + 1), f.counts)?;
        }
        Ok(r)
    }

    /// Accuracy over all held-out trials of all folds.
    pub fn accuracy(&self) -> f64 {
        let c = self
            .folds
            .iter()
            .fold(ConfusionCounts::default(), |acc, f| acc.merge(&f.counts));
        (c.tp + c.tn) as f64 / c.total().max(1) as f64
    }

    pub fn finetune_epochs(&self) -> usize {
        self.folds.iter().map(|f| f.finetune_epochs).sum()
    }
}

/// Features of a sample set with labels and trial ids.
#[derive(Clone, Debug)]
struct Feats {
    x: Tensor,
    y: Vec<f64>,
    trials: Vec<usize>,
}

impl Feats {
    fn of(extractor: &DadlNetParams, s: &Samples) -> Result<Feats> {
        Ok(Feats {
            x: extract_all(extractor, s)?,
            y: s.labels.clone(),
            trials: s.trial_ids.clone(),
        })
    }

    fn len(&self) -> usize {
        self.y.len()
    }

    fn subset(&self, idx: &[usize]) -> Feats {
        let d = self.x.shape()[1];
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(&self.x.data()[i * d..(i + 1) * d]);
        }
        Feats {
            x: Tensor::new(vec![idx.len(), d], data).expect("feature subset is nonempty"),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            trials: idx.iter().map(|&i| self.trials[i]).collect(),
        }
    }

    fn select_trials(&self, trials: &[usize]) -> Result<Feats> {
        let keep: std::collections::HashSet<usize> = trials.iter().copied().collect();
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep.contains(&self.trials[i])).collect();
        if idx.is_empty() {
            return Err(Error::Data("trial selection left no samples".into()));
        }
        Ok(self.subset(&idx))
    }
}

/// Data of one head-training stage. When `target_ce` is set the
/// classification term is computed on the labeled target data through
/// every source branch instead of on the sources.
struct StageData<'a> {
    sources: &'a [Feats],
    target: Option<&'a Feats>,
    target_ce: bool,
}

impl StageData<'_> {
    fn bundle(
        &self,
        k: usize,
        pick: &dyn Fn(usize) -> Option<Vec<usize>>,
        tpick: Option<Vec<usize>>,
    ) -> Result<DomainBundle> {
        let target = match (self.target, &tpick) {
            (Some(t), Some(idx)) => Some(t.subset(idx)),
            (Some(t), None) => Some(t.clone()),
            (None, _) => None,
        };
        let sources: Vec<(Tensor, Vec<f64>)> = if self.target_ce {
            let t = target
                .as_ref()
                .ok_or_else(|| Error::invalid("target classification without target data"))?;
            (0..k).map(|_| (t.x.clone(), t.y.clone())).collect()
        } else {
            self.sources
                .iter()
                .enumerate()
                .map(|(i, s)| match pick(i) {
                    Some(idx) => {
                        let f = s.subset(&idx);
                        (f.x, f.y)
                    }
                    None => (s.x.clone(), s.y.clone()),
                })
                .collect()
        };
        // without a target the alignment term is off; the first source
        // stands in so the bundle stays well formed
        let target_x = match target {
            Some(t) => t.x,
            None => sources[0].0.clone(),
        };
        DomainBundle::new(sources, target_x, None)
    }
}

struct Stage<'a> {
    tag: String,
    weights: LossWeights,
    trainable: &'a (dyn Fn(&str) -> bool + Sync),
    epochs: usize,
    seed: u64,
}

fn objective(head: &DdaHead, bundle: &DomainBundle, weights: LossWeights, cfg: &TrainConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = head.bind(&mut tape, &|_| false);
    let vars = head.loss_vars(&mut tape, &bound, bundle, weights, &cfg.mmd)?;
    Ok(tape.value(vars.total).data()[0])
}

/// Trains the head on mini-batches of `train`, early-stopping on the full
/// objective over `val`. Returns the best head and the epochs run.
fn train_head(
    head: &DdaHead,
    train: &StageData,
    val: &StageData,
    stage: &Stage,
    cfg: &TrainConfig,
    history: &mut History,
) -> Result<(DdaHead, usize)> {
    if stage.epochs == 0 {
        return Ok((head.clone(), 0));
    }
    let k = head.num_sources;
    let val_bundle = val.bundle(k, &|_| None, None)?;
    let mut head = head.clone();
    let mut state = NadamState::new();
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut run = 0;
    for epoch in 1..=stage.epochs {
        run = epoch;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(stage.seed, epoch as u64));
        let source_batches: Vec<Vec<Vec<usize>>> = if train.target_ce {
            Vec::new()
        } else {
            train
                .sources
                .iter()
                .map(|s| minibatches(s.len(), cfg.batch_size, &mut rng))
                .collect()
        };
        let target_batches = train
            .target
            .map(|t| minibatches(t.len(), cfg.batch_size, &mut rng))
            .unwrap_or_default();
        let steps = source_batches
            .iter()
            .map(Vec::len)
            .chain(std::iter::once(target_batches.len()))
            .max()
            .unwrap_or(0);
        let mut loss_sum = 0.0;
        for step in 0..steps {
            let pick = |i: usize| Some(source_batches[i][step % source_batches[i].len()].clone());
            let tpick = (!target_batches.is_empty()).then(|| target_batches[step % target_batches.len()].clone());
            let bundle = train.bundle(k, &pick, tpick)?;
            let mut tape = Tape::new();
            let bound = head.bind(&mut tape, stage.trainable);
            let vars = head.loss_vars(&mut tape, &bound, &bundle, stage.weights, &cfg.mmd)?;
            tape.backward(vars.total)?;
            loss_sum += tape.value(vars.total).data()[0];
            let grads = bound.grads(&tape);
            nadam_step(&mut head.params, &grads, &mut state, cfg)?;
        }
        history.push(
            epoch,
            format!("{}/train", stage.tag),
            loss_sum / steps.max(1) as f64,
            None,
        );
        let val_loss = objective(&head, &val_bundle, stage.weights, cfg)?;
        history.push(epoch, format!("{}/val", stage.tag), val_loss, None);
        if stopper.observe(val_loss, || head.clone()) {
            break;
        }
    }
    Ok((stopper.into_best().unwrap_or(head), run))
}

fn is_buffer_or_classifier(name: &str) -> bool {
    name.starts_with(BUFFER_PREFIX) || name.starts_with("dsc")
}

fn is_buffer_or_adapter(name: &str) -> bool {
    name.starts_with(BUFFER_PREFIX) || name.starts_with("dsa")
}

fn is_classifier(name: &str) -> bool {
    name.starts_with("dsc")
}

fn trial_counts(head: &DdaHead, test: &Feats) -> Result<ConfusionCounts> {
    let probs = head.predict(&test.x)?;
    Ok(ConfusionCounts::from_trial_probs(&probs, &test.y, &test.trials))
}

/// Runs the requested modes on shared source training and shared target
/// folds, so the reports are paired fold by fold. The extractor is only
/// read.
pub fn adapt_all(
    extractor: &DadlNetParams,
    sources: &[Samples],
    target: &Samples,
    cfg: &TrainConfig,
    modes: &[TransferMode],
) -> Result<Vec<AdaptReport>> {
    cfg.validate()?;
    if sources.is_empty() {
        return Err(Error::Data("adaptation needs at least one source domain".into()));
    }
    let mut trials: Vec<usize> = target.trial_ids.clone();
    trials.sort_unstable();
    trials.dedup();
    if trials.len() < cfg.folds {
        return Err(Error::Data(format!(
            "target has {} trials, fewer than the {} folds; some fold would hold no test data",
            trials.len(),
            cfg.folds
        )));
    }
    let source_feats: Vec<Feats> = sources.iter().map(|s| Feats::of(extractor, s)).collect::<Result<_>>()?;
    let target_feats = Feats::of(extractor, target)?;
    let d = extractor.config.feature_dim();
    let head0 = build_dda(
        sources.len(),
        d,
        cfg.buffer_dim,
        cfg.adapter_dim,
        derive_seed(cfg.seed, HEAD_STREAM),
    )?;

    // stage 1: buffer, adapters and classifiers on labeled source data
    let split_seed = derive_seed(cfg.seed, SOURCE_SPLIT_STREAM);
    let mut src_train = Vec::new();
    let mut src_val = Vec::new();
    for (i, f) in source_feats.iter().enumerate() {
        let (tr, va) = split_trials(&f.trials, cfg.val_fraction, derive_seed(split_seed, i as u64))?;
        src_train.push(f.select_trials(&tr)?);
        src_val.push(f.select_trials(&va)?);
    }
    let mut shared = History::default();
    let all = |_: &str| true;
    let source_stage = Stage {
        tag: "source".into(),
        weights: LossWeights { ce: 1.0, mmd: 0.0 },
        trainable: &all,
        epochs: cfg.stage_epochs[0],
        seed: derive_seed(cfg.seed, SOURCE_STAGE_STREAM),
    };
    let (head1, _) = train_head(
        &head0,
        &StageData {
            sources: &src_train,
            target: None,
            target_ce: false,
        },
        &StageData {
            sources: &src_val,
            target: None,
            target_ce: false,
        },
        &source_stage,
        cfg,
        &mut shared,
    )?;

    // stages 2 and 3 per target fold, on the fold's fine-tune split only
    let folds = kfold_split(trials.len(), cfg.folds, derive_seed(cfg.seed, FOLD_STREAM))?;
    let per_fold: Vec<Result<Vec<(FoldOutcome, History)>>> = folds
        .par_iter()
        .enumerate()
        .map(|(k, (ft_idx, test_idx))| {
            let ft_trials: Vec<usize> = ft_idx.iter().map(|&i| trials[i]).collect();
            let test_trials: Vec<usize> = test_idx.iter().map(|&i| trials[i]).collect();
            let fold_seed = derive_seed(derive_seed(cfg.seed, FOLD_WORK_STREAM), k as u64);
            let (ft_tr, ft_va) = split_trials(&ft_trials, cfg.val_fraction, fold_seed)?;
            let t_train = target_feats.select_trials(&ft_tr)?;
            let t_val = target_feats.select_trials(&ft_va)?;
            let t_test = target_feats.select_trials(&test_trials)?;
            modes
                .iter()
                .map(|&mode| {
                    let mut hist = History::default();
                    let tag = |s: &str| format!("fold{}.{mode}.{s}", k + 1);
                    let mut head = head1.clone();
                    let mut align_epochs = 0;
                    let mut finetune_epochs = 0;
                    if mode == TransferMode::Dda {
                        let weights = LossWeights {
                            ce: if cfg.joint_stage2 { 1.0 } else { 0.0 },
                            mmd: cfg.lambda_mmd,
                        };
                        if weights.ce > 0.0 || weights.mmd > 0.0 {
                            let stage = Stage {
                                tag: tag("align"),
                                weights,
                                trainable: &is_buffer_or_adapter,
                                epochs: cfg.stage_epochs[1],
                                seed: derive_seed(fold_seed, 2),
                            };
                            (head, align_epochs) = train_head(
                                &head,
                                &StageData {
                                    sources: &src_train,
                                    target: Some(&t_train),
                                    target_ce: false,
                                },
                                &StageData {
                                    sources: &src_val,
                                    target: Some(&t_val),
                                    target_ce: false,
                                },
                                &stage,
                                cfg,
                                &mut hist,
                            )?;
                        }
                    }
                    if mode != TransferMode::Ntf {
                        let trainable: &(dyn Fn(&str) -> bool + Sync) = if cfg.finetune_buffer {
                            &is_buffer_or_classifier
                        } else {
                            &is_classifier
                        };
                        let stage = Stage {
                            tag: tag("finetune"),
                            weights: LossWeights { ce: 1.0, mmd: 0.0 },
                            trainable,
                            epochs: cfg.stage_epochs[2],
                            seed: derive_seed(fold_seed, 3),
                        };
                        (head, finetune_epochs) = train_head(
                            &head,
                            &StageData {
                                sources: &[],
                                target: Some(&t_train),
                                target_ce: true,
                            },
                            &StageData {
                                sources: &[],
                                target: Some(&t_val),
                                target_ce: true,
                            },
                            &stage,
                            cfg,
                            &mut hist,
                        )?;
                    }
                    let counts = trial_counts(&head, &t_test)?;
                    Ok((
                        FoldOutcome {
                            fold: k,
                            finetune_trials: ft_trials.clone(),
                            test_trials: test_trials.clone(),
                            counts,
                            align_epochs,
                            finetune_epochs,
                            head,
                        },
                        hist,
                    ))
                })
                .collect()
        })
        .collect();

    let mut reports: Vec<AdaptReport> = modes
        .iter()
        .map(|&mode| AdaptReport {
            mode,
            folds: Vec::new(),
            history: shared.clone(),
        })
        .collect();
    for fold in per_fold {
        for (m, (outcome, hist)) in fold?.into_iter().enumerate() {
            reports[m].folds.push(outcome);
            reports[m].history.extend(hist);
        }
    }
    Ok(reports)
}

/// Source training, MMD alignment and classifier fine-tuning, evaluated
/// on held-out target folds.
pub fn adapt_dda(
    extractor: &DadlNetParams,
    sources: &[Samples],
    target: &Samples,
    cfg: &TrainConfig,
) -> Result<AdaptReport> {
    run_mode(TransferMode::Dda, extractor, sources, target, cfg)
}

pub fn run_mode(
    mode: TransferMode,
    extractor: &DadlNetParams,
    sources: &[Samples],
    target: &Samples,
    cfg: &TrainConfig,
) -> Result<AdaptReport> {
    let mut r = adapt_all(extractor, sources, target, cfg, &[mode])?;
    Ok(r.remove(0))
}
