use std::collections::HashSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DadlNetConfig, DadlNetParams};
use crate::representation::{
    select_channels, step_for, synth_generate, ChannelScheme, EpochSet, Montage, Samples, SynthConfig,
    INTER_STEP_FRACTION, INTRA_STEP_FRACTION,
};
use crate::training::{adapt_all, derive_seed, predict_all, pretrain, AdaptReport, History, TrainConfig, TransferMode};

use super::{kfold_split, ConfusionCounts, MetricsReport, Summary};

const SPLIT_STREAM: u64 = 20;
const MODEL_STREAM: u64 = 21;
const TRAIN_STREAM: u64 = 22;

/// Trials of one subject split by recording role: the training pool
/// (first session, or offline phases) and the test recording (second
/// session, or feedback phases).
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectData {
    pub id: String,
    pub train: EpochSet,
    pub test: EpochSet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub montage: Montage,
    pub subjects: Vec<SubjectData>,
}

impl Dataset {
    /// Checks that every recording shares channels, length and rate.
    pub fn new(name: impl Into<String>, montage: Montage, subjects: Vec<SubjectData>) -> Result<Self> {
        let first = subjects
            .first()
            .ok_or_else(|| Error::Data("dataset has no subjects".into()))?;
        let mut ids = HashSet::new();
        for s in &subjects {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::Data(format!("subject {} appears twice", s.id)));
            }
            for (role, set) in [("train", &s.train), ("test", &s.test)] {
                if set.trials() == 0 {
                    return Err(Error::Data(format!("subject {} has no {role} trials", s.id)));
                }
                if set.channel_names() != first.train.channel_names()
                    || set.timesteps() != first.train.timesteps()
                    || set.fs() != first.train.fs()
                {
                    return Err(Error::Data(format!(
                        "subject {} {role} recording differs in channels, length or rate from subject {}",
                        s.id, first.id
                    )));
                }
            }
        }
        Ok(Dataset {
            name: name.into(),
            montage,
            subjects,
        })
    }

    /// Synthetic subjects: session 1 is the training pool, the remaining
    /// sessions form the test recording.
    pub fn synthetic(cfg: &SynthConfig, montage: Montage) -> Result<Self> {
        if cfg.sessions < 2 {
            return Err(Error::Data(format!(
                "missing session: intra-subject evaluation needs 2 sessions per subject, config has {}",
                cfg.sessions
            )));
        }
        let sets = synth_generate(cfg)?;
        let subjects = sets
            .chunks(cfg.sessions)
            .map(|sess| {
                let rest: Vec<&EpochSet> = sess[1..].iter().collect();
                Ok(SubjectData {
                    id: sess[0].subject_id.clone(),
                    train: sess[0].clone(),
                    test: EpochSet::concat(&rest)?.with_ids(sess[0].subject_id.clone(), "test"),
                })
            })
            .collect::<Result<_>>()?;
        Dataset::new("synthetic", montage, subjects)
    }

    pub fn fs(&self) -> f64 {
        self.subjects[0].train.fs()
    }

    pub fn timesteps(&self) -> usize {
        self.subjects[0].train.timesteps()
    }

    /// The dataset reduced to a channel scheme on the same grid; dropped
    /// channels leave their cells empty.
    pub fn with_scheme(&self, scheme: ChannelScheme) -> Result<Dataset> {
        let Some(channels) = scheme.channels() else {
            return Ok(self.clone());
        };
        let montage = self.montage.restrict(channels)?;
        let subjects = self
            .subjects
            .iter()
            .map(|s| {
                Ok(SubjectData {
                    id: s.id.clone(),
                    train: select_channels(&s.train, scheme)?,
                    test: select_channels(&s.test, scheme)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Dataset {
            name: format!("{} ({scheme})", self.name),
            montage,
            subjects,
        })
    }
}

/// Everything a protocol run needs besides the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub model: DadlNetConfig,
    pub train: TrainConfig,
    /// Window length in samples; the whole trial when absent.
    pub window: Option<usize>,
    pub intra_step_fraction: f64,
    pub inter_step_fraction: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            model: DadlNetConfig::default(),
            train: TrainConfig::default(),
            window: None,
            intra_step_fraction: INTRA_STEP_FRACTION,
            inter_step_fraction: INTER_STEP_FRACTION,
        }
    }
}

impl ProtocolConfig {
    fn window_for(&self, ds: &Dataset) -> Result<usize> {
        let t = ds.timesteps();
        match self.window {
            Some(w) if w == 0 || w > t => Err(Error::Config(format!("window {w} must lie in 1..={t}"))),
            Some(w) => Ok(w),
            None => Ok(t),
        }
    }

    fn checked_model(&self, ds: &Dataset) -> Result<DadlNetConfig> {
        if (self.model.fs - ds.fs()).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "model fs {} differs from the data rate {}",
                self.model.fs,
                ds.fs()
            )));
        }
        Ok(self.model.clone())
    }
}

/// Tables of one protocol run plus the number of train/test disjointness
/// checks that passed.
#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolReport {
    pub protocol: String,
    /// One table per method; rows are subjects.
    pub tables: Vec<MetricsReport>,
    pub leakage_checks: usize,
    pub history: History,
}

impl ProtocolReport {
    pub fn table(&self, method: &str) -> Option<&MetricsReport> {
        self.tables.iter().find(|t| t.title == method)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# protocol: {}\n# leakage checks passed: {}\n",
            self.protocol, self.leakage_checks
        );
        for t in &self.tables {
            out.push('\n');
            out.push_str(&t.to_text());
        }
        out
    }
}

/// Fails if any trial key is on both sides.
pub fn audit_disjoint(train: &[String], test: &[String], context: &str) -> Result<()> {
    let train: HashSet<&String> = train.iter().collect();
    if let Some(k) = test.iter().find(|k| train.contains(k)) {
        return Err(Error::Leakage(format!(
            "{context}: trial {k} is in both training and test data"
        )));
    }
    Ok(())
}

fn keys(subject: &str, role: &str, trials: impl IntoIterator<Item = usize>) -> Vec<String> {
    trials.into_iter().map(|t| format!("{subject}/{role}/{t}")).collect()
}

struct SubjectRun {
    counts: ConfusionCounts,
    history: History,
    checks: usize,
}

fn intra_subject(ds: &Dataset, index: usize, cfg: &ProtocolConfig) -> Result<SubjectRun> {
    let s = &ds.subjects[index];
    let w = cfg.window_for(ds)?;
    let seed = cfg.train.seed;
    let folds = kfold_split(
        s.train.trials(),
        cfg.train.folds,
        derive_seed(derive_seed(seed, SPLIT_STREAM), index as u64),
    )?;
    let (train_idx, val_idx) = &folds[0];
    let train_keys = keys(&s.id, "train", train_idx.iter().copied());
    let val_keys = keys(&s.id, "train", val_idx.iter().copied());
    let test_keys = keys(&s.id, "test", 0..s.test.trials());
    audit_disjoint(&train_keys, &val_keys, &format!("intra {} train/val", s.id))?;
    let fitted: Vec<String> = train_keys.into_iter().chain(val_keys).collect();
    audit_disjoint(&fitted, &test_keys, &format!("intra {} train/test", s.id))?;

    // slide the training split only; validation and test use whole,
    // non-overlapping windows
    let train = Samples::from_epochs(
        &s.train.subset(train_idx),
        &ds.montage,
        Some((w, step_for(w, cfg.intra_step_fraction))),
    )?;
    let val = Samples::from_epochs(&s.train.subset(val_idx), &ds.montage, Some((w, w)))?;
    let test = Samples::from_epochs(&s.test, &ds.montage, Some((w, w)))?;
    let model = DadlNetParams::build(
        &cfg.checked_model(ds)?,
        (w, ds.montage.rows(), ds.montage.cols()),
        derive_seed(derive_seed(seed, MODEL_STREAM), index as u64),
    )?;
    let tcfg = TrainConfig {
        seed: derive_seed(derive_seed(seed, TRAIN_STREAM), index as u64),
        ..cfg.train.clone()
    };
    let (best, history) = pretrain(&model, &train, &val, &tcfg)?;
    let probs = predict_all(&best, &test)?;
    Ok(SubjectRun {
        counts: ConfusionCounts::from_trial_probs(&probs, &test.labels, &test.trial_ids),
        history: prefixed(history, &s.id),
        checks: 2,
    })
}

fn prefixed(h: History, prefix: &str) -> History {
    let mut out = History::default();
    for r in h.records {
        out.push(r.epoch, format!("{prefix}.{}", r.split), r.loss, r.acc);
    }
    out
}

/// Per subject: 5-fold split of the training pool (first fold used as
/// train/validation), sliding windows on the training split, evaluation
/// on the test recording. Subjects run in parallel.
pub fn run_intra_subject(ds: &Dataset, cfg: &ProtocolConfig) -> Result<ProtocolReport> {
    let runs: Vec<SubjectRun> = (0..ds.subjects.len())
        .into_par_iter()
        .map(|i| intra_subject(ds, i, cfg))
        .collect::<Result<_>>()?;
    let mut table = MetricsReport::new("pretrain");
    let mut history = History::default();
    let mut checks = 0;
    for (s, run) in ds.subjects.iter().zip(runs) {
        table.push(s.id.clone(), run.counts)?;
        history.extend(run.history);
        checks += run.checks;
    }
    Ok(ProtocolReport {
        protocol: format!("intra-subject, {}", ds.name),
        tables: vec![table],
        leakage_checks: checks,
        history,
    })
}

/// Outcome of one leave-one-subject-out run.
#[derive(Clone, Debug, PartialEq)]
pub struct InterRun {
    pub target: String,
    /// Subjects whose trials were used for pretraining.
    pub pretrain_subjects: Vec<String>,
    /// Trial-level counts of the pretrained network on the whole target.
    pub pretrain_counts: ConfusionCounts,
    /// Per requested mode, counts pooled over the target folds.
    pub modes: Vec<(TransferMode, ConfusionCounts, usize)>,
    pub extractor: DadlNetParams,
    pub adapt_reports: Vec<AdaptReport>,
    pub history: History,
    pub leakage_checks: usize,
}

impl InterRun {
    pub fn accuracy(&self, mode: TransferMode) -> Option<f64> {
        self.modes
            .iter()
            .find(|(m, _, _)| *m == mode)
            .map(|(_, c, _)| (c.tp + c.tn) as f64 / c.total().max(1) as f64)
    }
}

/// Pretrains on the pooled other subjects, then adapts to subject
/// `target` with one source domain per remaining subject.
pub fn run_inter_subject_target(
    ds: &Dataset,
    target: usize,
    cfg: &ProtocolConfig,
    modes: &[TransferMode],
) -> Result<InterRun> {
    if ds.subjects.len() < 2 {
        return Err(Error::Data("inter-subject evaluation needs at least 2 subjects".into()));
    }
    let t = ds
        .subjects
        .get(target)
        .ok_or_else(|| Error::invalid(format!("target index {target} out of range")))?;
    let w = cfg.window_for(ds)?;
    let seed = derive_seed(cfg.train.seed, 1000 + target as u64);
    let whole = |s: &SubjectData| EpochSet::concat(&[&s.train, &s.test]);
    let others: Vec<&SubjectData> = ds.subjects.iter().filter(|s| s.id != t.id).collect();
    let source_sets: Vec<EpochSet> = others.iter().map(|s| whole(s)).collect::<Result<_>>()?;
    let pooled = EpochSet::concat(&source_sets.iter().collect::<Vec<_>>())?;
    let pooled_keys: Vec<String> = others
        .iter()
        .zip(&source_sets)
        .flat_map(|(s, set)| keys(&s.id, "all", 0..set.trials()))
        .collect();
    let target_set = whole(t)?;
    let target_keys = keys(&t.id, "all", 0..target_set.trials());
    audit_disjoint(&pooled_keys, &target_keys, &format!("inter {} pretrain/target", t.id))?;

    let folds = kfold_split(pooled.trials(), cfg.train.folds, derive_seed(seed, SPLIT_STREAM))?;
    let (train_idx, val_idx) = &folds[0];
    let step = step_for(w, cfg.inter_step_fraction);
    let train = Samples::from_epochs(&pooled.subset(train_idx), &ds.montage, Some((w, step)))?;
    let val = Samples::from_epochs(&pooled.subset(val_idx), &ds.montage, Some((w, w)))?;
    let model = DadlNetParams::build(
        &cfg.checked_model(ds)?,
        (w, ds.montage.rows(), ds.montage.cols()),
        derive_seed(seed, MODEL_STREAM),
    )?;
    let tcfg = TrainConfig {
        seed: derive_seed(seed, TRAIN_STREAM),
        ..cfg.train.clone()
    };
    let (extractor, pre_hist) = pretrain(&model, &train, &val, &tcfg)?;
    let mut history = prefixed(pre_hist, &t.id);

    let target_samples = Samples::from_epochs(&target_set, &ds.montage, Some((w, w)))?;
    let probs = predict_all(&extractor, &target_samples)?;
    let pretrain_counts = ConfusionCounts::from_trial_probs(&probs, &target_samples.labels, &target_samples.trial_ids);

    let mut checks = 1;
    let mut mode_counts = Vec::new();
    let mut adapt_reports = Vec::new();
    if !modes.is_empty() {
        let sources: Vec<Samples> = source_sets
            .iter()
            .map(|s| Samples::from_epochs(s, &ds.montage, Some((w, step))))
            .collect::<Result<_>>()?;
        let reports = adapt_all(&extractor, &sources, &target_samples, &tcfg, modes)?;
        for r in &reports {
            let mut counts = ConfusionCounts::default();
            for f in &r.folds {
                audit_disjoint(
                    &keys(&t.id, "all", f.finetune_trials.iter().copied()),
                    &keys(&t.id, "all", f.test_trials.iter().copied()),
                    &format!("inter {} {} fold {}", t.id, r.mode, f.fold + 1),
                )?;
                checks += 1;
                counts = counts.merge(&f.counts);
            }
            mode_counts.push((r.mode, counts, r.finetune_epochs()));
            history.extend(prefixed(r.history.clone(), &format!("{}.{}", t.id, r.mode)));
        }
        adapt_reports = reports;
    }
    Ok(InterRun {
        target: t.id.clone(),
        pretrain_subjects: others.iter().map(|s| s.id.clone()).collect(),
        pretrain_counts,
        modes: mode_counts,
        extractor,
        adapt_reports,
        history,
        leakage_checks: checks,
    })
}

/// Leave-one-subject-out over every subject. Tables: `pretrain` (the
/// pooled network applied to the target) and one per mode.
pub fn run_inter_subject(ds: &Dataset, cfg: &ProtocolConfig, modes: &[TransferMode]) -> Result<ProtocolReport> {
    if ds.subjects.len() < 2 {
        return Err(Error::Data("inter-subject evaluation needs at least 2 subjects".into()));
    }
    let runs: Vec<InterRun> = (0..ds.subjects.len())
        .into_par_iter()
        .map(|i| run_inter_subject_target(ds, i, cfg, modes))
        .collect::<Result<_>>()?;
    let mut tables = vec![MetricsReport::new("pretrain")];
    tables.extend(modes.iter().map(|m| MetricsReport::new(m.name())));
    let mut history = History::default();
    let mut checks = 0;
    for run in runs {
        tables[0].push(run.target.clone(), run.pretrain_counts)?;
        for (i, (_, c, _)) in run.modes.iter().enumerate() {
            tables[i + 1].push(run.target.clone(), *c)?;
        }
        history.extend(run.history);
        checks += run.leakage_checks;
    }
    Ok(ProtocolReport {
        protocol: format!("inter-subject (leave one subject out), {}", ds.name),
        tables,
        leakage_checks: checks,
        history,
    })
}

/// One row per channel scheme; a scheme whose channels are missing keeps
/// its error and the others still run.
pub struct SchemeSweep {
    pub rows: Vec<(ChannelScheme, Result<ProtocolReport>)>,
}

impl SchemeSweep {
    pub fn to_text(&self) -> String {
        let mut out = String::from("# channel schemes, intra-subject; mean and population std over subjects\n");
        out.push_str("scheme\tacc_mean\tacc_std\tsen_mean\tspe_mean\tf1_mean\n");
        for (scheme, r) in &self.rows {
            match r {
                Ok(rep) => {
                    let t = &rep.tables[0];
                    let m = |s: Summary| super::Cell(s.mean).to_string();
                    let _ = writeln!(
                        out,
                        "{scheme}\t{}\t{}\t{}\t{}\t{}",
                        m(t.acc()),
                        super::Cell(t.acc().std),
                        m(t.sen()),
                        m(t.spe()),
                        m(t.f1())
                    );
                }
                Err(e) => {
                    let _ = writeln!(out, "{scheme}\terror: {e}");
                }
            }
        }
        out
    }
}

pub fn sweep_channel_schemes(ds: &Dataset, cfg: &ProtocolConfig) -> SchemeSweep {
    let rows = ChannelScheme::ALL
        .into_iter()
        .map(|scheme| {
            let r = ds.with_scheme(scheme).and_then(|d| run_intra_subject(&d, cfg));
            (scheme, r)
        })
        .collect();
    SchemeSweep { rows }
}

/// Per-subject F1 for each block-1 temporal kernel fraction.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSweep {
    pub fractions: Vec<f64>,
    pub subjects: Vec<String>,
    /// `f1[subject][fraction]`.
    pub f1: Vec<Vec<Option<f64>>>,
    pub reports: Vec<ProtocolReport>,
}

impl KernelSweep {
    pub fn column(&self, j: usize) -> Summary {
        super::summarize(self.f1.iter().map(|row| row[j]))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# temporal kernel sweep, intra-subject F1; std: population\nsubject");
        for f in &self.fractions {
            let _ = write!(out, "\t{f}");
        }
        out.push('\n');
        for (s, row) in self.subjects.iter().zip(&self.f1) {
            out.push_str(s);
            for v in row {
                let _ = write!(out, "\t{}", super::Cell(*v));
            }
            out.push('\n');
        }
        for (name, pick) in [
            ("mean", (|s: Summary| s.mean) as fn(Summary) -> Option<f64>),
            ("std", |s| s.std),
        ] {
            out.push_str(name);
            for j in 0..self.fractions.len() {
                let _ = write!(out, "\t{}", super::Cell(pick(self.column(j))));
            }
            out.push('\n');
        }
        out
    }
}

pub fn sweep_time_kernels(ds: &Dataset, cfg: &ProtocolConfig, fractions: &[f64]) -> Result<KernelSweep> {
    let cfgs: Vec<ProtocolConfig> = fractions
        .iter()
        .map(|&f| {
            let c = ProtocolConfig {
                model: DadlNetConfig {
                    temporal_kernel_fraction: f,
                    ..cfg.model.clone()
                },
                ..cfg.clone()
            };
            c.model.first_temporal_kernel()?;
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let reports: Vec<ProtocolReport> = cfgs.iter().map(|c| run_intra_subject(ds, c)).collect::<Result<_>>()?;
    let f1 = (0..ds.subjects.len())
        .map(|i| reports.iter().map(|r| r.tables[0].rows[i].metrics.f1).collect())
        .collect();
    Ok(KernelSweep {
        fractions: fractions.to_vec(),
        subjects: ds.subjects.iter().map(|s| s.id.clone()).collect(),
        f1,
        reports,
    })
}
