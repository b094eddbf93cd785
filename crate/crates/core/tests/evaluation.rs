mod common;

use std::collections::HashSet;

use dadlnet::evaluation::*;
use dadlnet::model::DadlNetConfig;
use dadlnet::representation::*;
use dadlnet::training::{TrainConfig, TransferMode};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn worked_example() {
    let m = metrics(&ConfusionCounts::new(3, 1, 4, 2)).unwrap();
    assert_eq!(m.acc, 0.7);
    assert_eq!(m.sen, Some(0.6));
    assert_eq!(m.spe, Some(0.8));
    assert!((m.f1.unwrap() - 0.6667).abs() < 5e-5);
    assert_eq!(m.f1, Some(6.0 / 9.0));
}

#[test]
fn symmetric_and_perfect_cases() {
    let m = metrics(&ConfusionCounts::new(5, 5, 5, 5)).unwrap();
    assert_eq!((m.acc, m.sen, m.spe, m.f1), (0.5, Some(0.5), Some(0.5), Some(0.5)));
    let m = metrics(&ConfusionCounts::new(4, 0, 6, 0)).unwrap();
    assert_eq!((m.acc, m.sen, m.spe, m.f1), (1.0, Some(1.0), Some(1.0), Some(1.0)));
}

#[test]
fn zero_denominators_are_undefined_not_zero() {
    let m = metrics(&ConfusionCounts::new(0, 0, 7, 0)).unwrap();
    assert_eq!(m.acc, 1.0);
    assert_eq!(m.sen, None);
    assert_eq!(m.f1, None);
    assert_eq!(m.spe, Some(1.0));
    assert!(metrics(&ConfusionCounts::default()).is_err());
    let mut r = MetricsReport::new("t");
    r.push("a", ConfusionCounts::new(0, 0, 7, 0)).unwrap();
    r.push("b", ConfusionCounts::new(1, 0, 1, 0)).unwrap();
    assert_eq!(r.sen().n, 1);
    assert_eq!(r.sen().mean, Some(1.0));
    assert!(r.to_text().lines().nth(3).unwrap().ends_with("NA\t1.0000\tNA"));
}

#[test]
fn twenty_random_matrices_match_hand_formulas() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..20 {
        let (tp, fp, tn, fn_) = (
            rng.random_range(1..50u64),
            rng.random_range(1..50u64),
            rng.random_range(1..50u64),
            rng.random_range(1..50u64),
        );
        let m = metrics(&ConfusionCounts::new(tp, fp, tn, fn_)).unwrap();
        let total = (tp + fp + tn + fn_) as f64;
        assert_eq!(m.acc, (tp + tn) as f64 / total);
        assert_eq!(m.sen, Some(tp as f64 / (tp + fn_) as f64));
        assert_eq!(m.spe, Some(tn as f64 / (tn + fp) as f64));
        assert_eq!(m.f1, Some((2 * tp) as f64 / (2 * tp + fp + fn_) as f64));
    }
}

#[test]
fn trial_probabilities_are_averaged() {
    // trial 0: mean 0.55 -> positive; trial 1: mean 0.45 -> negative
    let c = ConfusionCounts::from_trial_probs(&[0.9, 0.2, 0.1, 0.8], &[1.0, 1.0, 0.0, 0.0], &[0, 0, 1, 1]);
    assert_eq!(c, ConfusionCounts::new(1, 0, 1, 0));
}

#[test]
fn kfold_examples() {
    let folds = kfold_split(10, 5, 3).unwrap();
    assert_eq!(folds.len(), 5);
    let mut all: Vec<usize> = Vec::new();
    for (train, test) in &folds {
        assert_eq!(test.len(), 2);
        assert_eq!(train.len(), 8);
        all.extend(test);
    }
    all.sort_unstable();
    assert_eq!(all, (0..10).collect::<Vec<_>>());
    assert!(kfold_split(3, 5, 0).is_err());
    assert!(kfold_split(10, 1, 0).is_err());
    assert_eq!(kfold_split(10, 5, 3).unwrap(), folds);
}

#[test]
fn window_level_data_never_straddles_folds() {
    let cfg = SynthConfig {
        n_subjects: 1,
        trials: 20,
        timesteps: 64,
        fs: 32.0,
        ..SynthConfig::default()
    };
    let set = &synth_generate(&cfg).unwrap()[0];
    let m = Montage::openbmi31();
    for (train, test) in kfold_split(set.trials(), 5, 9).unwrap() {
        let tr = Samples::from_epochs(&set.subset(&train), &m, Some((16, 2))).unwrap();
        let te = Samples::from_epochs(&set.subset(&test), &m, Some((16, 16))).unwrap();
        // map local window trial ids back to the original trial indices
        let tr_trials: HashSet<usize> = tr.trial_ids.iter().map(|&t| train[t]).collect();
        let te_trials: HashSet<usize> = te.trial_ids.iter().map(|&t| test[t]).collect();
        assert!(tr_trials.is_disjoint(&te_trials));
        assert_eq!(tr_trials.len() + te_trials.len(), 20);
    }
}

#[test]
fn report_aggregates_are_recomputable() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut r = MetricsReport::new("folds");
    for i in 0..7 {
        let c = ConfusionCounts::new(
            rng.random_range(0..20),
            rng.random_range(0..20),
            rng.random_range(0..20),
            rng.random_range(1..20),
        );
        r.push(format!("fold{i}"), c).unwrap();
    }
    let accs: Vec<f64> = r.rows.iter().map(|row| row.metrics.acc).collect();
    let mean = accs.iter().sum::<f64>() / 7.0;
    let std = (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 7.0).sqrt();
    assert!((r.acc().mean.unwrap() - mean).abs() < 1e-12);
    assert!((r.acc().std.unwrap() - std).abs() < 1e-12);
    let text = r.to_text();
    assert!(text.contains("# std: population"));
    assert_eq!(text.lines().count(), 3 + 7 + 2);
}

proptest! {
    #[test]
    fn accuracy_identity(tp in 0u64..100, fp in 0u64..100, tn in 0u64..100, fn_ in 0u64..100) {
        let c = ConfusionCounts::new(tp, fp, tn, fn_);
        prop_assume!(c.total() > 0);
        let m = metrics(&c).unwrap();
        let (p, n) = ((tp + fn_) as f64, (tn + fp) as f64);
        let rebuilt = (m.sen.unwrap_or(0.0) * p + m.spe.unwrap_or(0.0) * n) / (p + n);
        prop_assert!((m.acc - rebuilt).abs() < 1e-12);
        for v in [Some(m.acc), m.sen, m.spe, m.f1].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn kfold_partitions(n in 2usize..60, k in 2usize..8, seed in 0u64..1000) {
        prop_assume!(n >= k);
        let folds = kfold_split(n, k, seed).unwrap();
        let sizes: Vec<usize> = folds.iter().map(|(_, t)| t.len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut seen = vec![0; n];
        for (train, test) in &folds {
            prop_assert_eq!(train.len() + test.len(), n);
            for &i in test { seen[i] += 1; }
            let tr: HashSet<_> = train.iter().collect();
            prop_assert!(test.iter().all(|i| !tr.contains(i)));
        }
        prop_assert!(seen.iter().all(|&s| s == 1));
        prop_assert_eq!(kfold_split(n, k, seed).unwrap(), folds);
    }
}

fn tiny_protocol(seed: u64) -> ProtocolConfig {
    ProtocolConfig {
        model: DadlNetConfig {
            fs: 32.0,
            filters: vec![4, 8, 8, 8],
            temporal_pools: vec![2, 2, 1, 1],
            ..DadlNetConfig::default()
        },
        train: TrainConfig {
            max_epochs: 3,
            batch_size: 16,
            stage_epochs: [3, 2, 2],
            buffer_dim: 8,
            adapter_dim: 4,
            seed,
            ..TrainConfig::default()
        },
        window: Some(32),
        ..ProtocolConfig::default()
    }
}

fn tiny_dataset(subjects: usize, seed: u64) -> Dataset {
    let cfg = SynthConfig {
        n_subjects: subjects,
        sessions: 2,
        trials: 10,
        timesteps: 48,
        fs: 32.0,
        freq_hz: 6.0,
        domain_shift: 0.5,
        seed,
        ..SynthConfig::default()
    };
    Dataset::synthetic(&cfg, Montage::openbmi31()).unwrap()
}

#[test]
fn intra_subject_report_shape_and_determinism() {
    let ds = tiny_dataset(2, 1);
    let cfg = tiny_protocol(2);
    let r = run_intra_subject(&ds, &cfg).unwrap();
    let t = r.table("pretrain").unwrap();
    assert_eq!(t.rows.len(), 2);
    assert_eq!(t.rows[0].counts.total(), 10);
    assert_eq!(r.leakage_checks, 4);
    let text = r.to_text();
    assert!(text.lines().any(|l| l.starts_with("mean\t")));
    assert!(text.lines().any(|l| l.starts_with("std\t")));
    assert_eq!(run_intra_subject(&ds, &cfg).unwrap(), r);
}

#[test]
fn intra_subject_needs_a_test_session() {
    let cfg = SynthConfig {
        sessions: 1,
        ..SynthConfig::default()
    };
    let err = Dataset::synthetic(&cfg, Montage::openbmi31()).unwrap_err();
    assert!(err.to_string().contains("missing session"), "{err}");
}

#[test]
fn inter_subject_leaves_each_subject_out() {
    let ds = tiny_dataset(3, 3);
    let cfg = tiny_protocol(4);
    let run = run_inter_subject_target(&ds, 0, &cfg, &[TransferMode::Dda]).unwrap();
    assert_eq!(run.target, "S01");
    assert_eq!(run.pretrain_subjects, vec!["S02", "S03"]);
    // 1 pretrain/target check plus one per target fold
    assert_eq!(run.leakage_checks, 1 + 5);
    assert!(run.accuracy(TransferMode::Dda).is_some());

    let r = run_inter_subject(&ds, &cfg, &[TransferMode::Ntf]).unwrap();
    assert_eq!(r.tables.len(), 2);
    for t in &r.tables {
        assert_eq!(t.rows.len(), 3);
        assert!(t.rows.iter().all(|row| row.counts.total() == 20));
    }
    let single = Dataset::new("one", ds.montage.clone(), ds.subjects[..1].to_vec()).unwrap();
    assert!(run_inter_subject(&single, &cfg, &[]).is_err());
}

#[test]
fn leakage_audit_detects_overlap() {
    let a = vec!["S01/all/1".to_string(), "S01/all/2".to_string()];
    assert!(audit_disjoint(&a, &["S01/all/3".to_string()], "x").is_ok());
    let err = audit_disjoint(&a, &["S01/all/2".to_string()], "x").unwrap_err();
    assert!(err.to_string().contains("S01/all/2"));
}

#[test]
fn channel_sweep_has_five_rows_and_isolates_errors() {
    let ds = tiny_dataset(1, 5);
    let cfg = tiny_protocol(6);
    let sweep = sweep_channel_schemes(&ds, &cfg);
    assert_eq!(sweep.rows.len(), 5);
    assert!(sweep.rows.iter().all(|(_, r)| r.is_ok()));
    let all = sweep.rows[0].1.as_ref().unwrap();
    assert_eq!(all, &run_intra_subject(&ds, &cfg).unwrap());
    assert_eq!(sweep.to_text().lines().count(), 2 + 5);

    // drop C3 from the data: schemes needing it fail, the others run
    let mut partial = ds.clone();
    let keep: Vec<&str> = OPENBMI_CHANNELS.iter().copied().filter(|c| *c != "C3").collect();
    let m = partial.montage.restrict(&keep).unwrap();
    partial.montage = m;
    for s in &mut partial.subjects {
        s.train = drop_channel(&s.train, "C3");
        s.test = drop_channel(&s.test, "C3");
    }
    let sweep = sweep_channel_schemes(&partial, &cfg);
    let failed: Vec<ChannelScheme> = sweep.rows.iter().filter(|(_, r)| r.is_err()).map(|(s, _)| *s).collect();
    assert_eq!(failed, vec![ChannelScheme::S1, ChannelScheme::S3]);
    assert!(sweep.to_text().contains("error: channel C3"));
}

fn drop_channel(set: &EpochSet, name: &str) -> EpochSet {
    let t = set.timesteps();
    let keep: Vec<usize> = (0..set.channels())
        .filter(|&c| set.channel_names()[c] != name)
        .collect();
    let mut data = Vec::new();
    for i in 0..set.trials() {
        for &c in &keep {
            data.extend_from_slice(&set.trial(i)[c * t..(c + 1) * t]);
        }
    }
    EpochSet::new(
        data,
        set.labels().to_vec(),
        t,
        set.fs(),
        keep.iter().map(|&c| set.channel_names()[c].clone()).collect(),
    )
    .unwrap()
}

#[test]
fn kernel_sweep_has_four_columns() {
    let ds = tiny_dataset(1, 7);
    let cfg = tiny_protocol(8);
    let sweep = sweep_time_kernels(&ds, &cfg, &dadlnet::model::TEMPORAL_KERNEL_FRACTIONS).unwrap();
    assert_eq!(sweep.f1[0].len(), 4);
    let header = sweep.to_text().lines().nth(1).unwrap().to_string();
    assert_eq!(header, "subject\t0.25\t0.125\t0.0625\t0.03125");
    assert_eq!(
        sweep_time_kernels(&ds, &cfg, &dadlnet::model::TEMPORAL_KERNEL_FRACTIONS).unwrap(),
        sweep
    );
    // 0.01 * 32 Hz is shorter than one sample
    assert!(sweep_time_kernels(&ds, &cfg, &[0.01]).is_err());
}
