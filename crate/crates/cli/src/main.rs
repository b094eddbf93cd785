use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dadlnet::evaluation::{
    run_inter_subject, run_inter_subject_target, run_intra_subject, sweep_channel_schemes, sweep_time_kernels, Dataset,
    MetricsReport,
};
use dadlnet::io::{save_epochs, Manifest, Phase, RunConfig, RunDir};
use dadlnet::model::{DadlNetParams, TEMPORAL_KERNEL_FRACTIONS};
use dadlnet::params::ParamSet;
use dadlnet::representation::{synth_generate, ChannelScheme, Montage, Samples};
use dadlnet::training::{derive_seed, evaluate_model, predict_all, pretrain, TransferMode};
use dadlnet::{evaluation, Error, Result};
use log::{info, warn};

#[derive(Parser)]
#[command(name = "dadlnet", version, about = "EEG motor-imagery training and evaluation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the synthetic-data and training seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Transfer strategy; all three when absent.
    #[arg(long, global = true)]
    mode: Option<ModeArg>,
    /// Channel scheme applied to the data before training.
    #[arg(long, global = true, default_value = "all")]
    scheme: String,
    /// Directory receiving every output file.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads for independent runs; all cores when absent.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Dataset manifest; synthetic subjects from the config when absent.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Dda,
    Ft,
    Ntf,
}

impl From<ModeArg> for TransferMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Dda => TransferMode::Dda,
            ModeArg::Ft => TransferMode::Ft,
            ModeArg::Ntf => TransferMode::Ntf,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Protocol {
    Intra,
    Inter,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic subjects as epoch files plus a manifest and montage.
    Synth {
        #[arg(long)]
        subjects: Option<usize>,
    },
    /// Train the network on the pooled training recordings of all subjects.
    Pretrain,
    /// Leave one subject out: pretrain on the others, then adapt to it.
    Adapt {
        /// Target subject id; the last subject when absent.
        #[arg(long)]
        target: Option<String>,
    },
    /// Run a full protocol over every subject.
    Evaluate {
        #[arg(long, value_enum, default_value = "intra")]
        protocol: Protocol,
    },
    /// Intra-subject runs for all channel schemes.
    SweepChannels,
    /// Intra-subject runs for each block-1 temporal kernel fraction.
    SweepKernels,
    /// Print the report of a finished run directory.
    Report {
        /// Run directory; `--out-dir` when absent.
        run_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.kind());
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    if let Some(jobs) = c.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("cannot size the worker pool: {e}")))?;
    }
    let cfg = load_config(c)?;
    let scheme: ChannelScheme = c.scheme.parse()?;
    let modes: Vec<TransferMode> = match c.mode {
        Some(m) => vec![m.into()],
        None => TransferMode::ALL.to_vec(),
    };
    match &cli.command {
        Command::Synth { subjects } => synth(c, cfg, *subjects),
        Command::Pretrain => {
            let (run, ds) = prepare(c, &cfg, scheme)?;
            pretrain_cmd(&run, &ds, &cfg)
        }
        Command::Adapt { target } => {
            let (run, ds) = prepare(c, &cfg, scheme)?;
            adapt_cmd(&run, &ds, &cfg, target.as_deref(), &modes)
        }
        Command::Evaluate { protocol } => {
            let (run, ds) = prepare(c, &cfg, scheme)?;
            let report = match protocol {
                Protocol::Intra => run_intra_subject(&ds, &cfg.protocol())?,
                Protocol::Inter => run_inter_subject(&ds, &cfg.protocol(), &modes)?,
            };
            run.write_log(&report.history)?;
            finish(&run, &report.to_text())
        }
        Command::SweepChannels => {
            let (run, ds) = prepare(c, &cfg, ChannelScheme::All)?;
            let sweep = sweep_channel_schemes(&ds, &cfg.protocol());
            for (s, r) in &sweep.rows {
                if let Err(e) = r {
                    warn!("scheme {s} failed: {e}");
                }
            }
            finish(&run, &sweep.to_text())
        }
        Command::SweepKernels => {
            let (run, ds) = prepare(c, &cfg, scheme)?;
            let sweep = sweep_time_kernels(&ds, &cfg.protocol(), &TEMPORAL_KERNEL_FRACTIONS)?;
            finish(&run, &sweep.to_text())
        }
        Command::Report { run_dir } => {
            let dir = run_dir.as_deref().unwrap_or(&c.out_dir);
            let path = dir.join(RunDir::REPORT);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            print!("{text}");
            Ok(())
        }
    }
}

/// Config file, then flag overrides; a flag that changes a configured
/// value is logged.
fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = c.seed {
        if c.config.is_some() && (cfg.train.seed != seed || cfg.synth.seed != seed) {
            info!(
                "--seed {seed} overrides configured seeds (synth {}, train {})",
                cfg.synth.seed, cfg.train.seed
            );
        }
        cfg.train.seed = seed;
        cfg.synth.seed = seed;
    }
    Ok(cfg)
}

fn load_dataset(c: &Common, cfg: &RunConfig) -> Result<Dataset> {
    match &c.manifest {
        Some(p) => Manifest::load(p)?.load_dataset(),
        None => Dataset::synthetic(&cfg.synth, Montage::openbmi31()),
    }
}

fn prepare(c: &Common, cfg: &RunConfig, scheme: ChannelScheme) -> Result<(RunDir, Dataset)> {
    let ds = load_dataset(c, cfg)?.with_scheme(scheme)?;
    let run = RunDir::create(&c.out_dir)?;
    run.write_config(cfg)?;
    info!(
        "{}: {} subjects, writing to {}",
        ds.name,
        ds.subjects.len(),
        c.out_dir.display()
    );
    Ok((run, ds))
}

fn finish(run: &RunDir, report: &str) -> Result<()> {
    run.write_report(report)?;
    print!("{report}");
    Ok(())
}

fn synth(c: &Common, mut cfg: RunConfig, subjects: Option<usize>) -> Result<()> {
    if let Some(n) = subjects {
        cfg.synth.n_subjects = n;
    }
    let run = RunDir::create(&c.out_dir)?;
    run.write_config(&cfg)?;
    let montage = Montage::openbmi31();
    let montage_path = c.out_dir.join("montage.txt");
    dadlnet::io::write_atomic(&montage_path, montage.to_text().as_bytes())?;
    let mut manifest = Manifest {
        name: "synthetic".into(),
        montage: PathBuf::from("montage.txt"),
        entries: Default::default(),
    };
    for set in synth_generate(&cfg.synth)? {
        let file = format!("{}_s{}.eeg3", set.subject_id, set.session_id);
        save_epochs(&set, &c.out_dir.join(&file))?;
        let phase = if set.session_id == "1" {
            Phase::Train
        } else {
            Phase::Test
        };
        manifest.entries.insert(
            dadlnet::io::EntryKey {
                subject: set.subject_id.clone(),
                session: set.session_id.clone(),
                phase,
            },
            PathBuf::from(file),
        );
    }
    manifest.save(&c.out_dir.join("manifest.txt"))?;
    info!("wrote {} epoch files", manifest.entries.len());
    Ok(())
}

fn prefixed(into: &mut ParamSet, prefix: &str, params: &ParamSet) {
    for (name, t) in params.iter() {
        into.insert(format!("{prefix}{name}"), t.clone());
    }
}

fn pretrain_cmd(run: &RunDir, ds: &Dataset, cfg: &RunConfig) -> Result<()> {
    let p = cfg.protocol();
    let w = p.window.unwrap_or(ds.timesteps());
    let pool: Vec<&dadlnet::representation::EpochSet> = ds.subjects.iter().map(|s| &s.train).collect();
    let pooled = dadlnet::representation::EpochSet::concat(&pool)?;
    let folds = evaluation::kfold_split(pooled.trials(), cfg.train.folds, derive_seed(cfg.train.seed, 30))?;
    let (train_idx, val_idx) = &folds[0];
    let step = dadlnet::representation::step_for(w, p.intra_step_fraction);
    let train = Samples::from_epochs(&pooled.subset(train_idx), &ds.montage, Some((w, step)))?;
    let val = Samples::from_epochs(&pooled.subset(val_idx), &ds.montage, Some((w, w)))?;
    let model = DadlNetParams::build(
        &cfg.model,
        (w, ds.montage.rows(), ds.montage.cols()),
        derive_seed(cfg.train.seed, 31),
    )?;
    let (best, history) = pretrain(&model, &train, &val, &cfg.train)?;
    run.write_log(&history)?;
    run.write_checkpoint(&best.params)?;

    let (_, train_acc) = evaluate_model(&best, &train)?;
    let (_, val_acc) = evaluate_model(&best, &val)?;
    let mut table = MetricsReport::new("pretrain, test recordings");
    for s in &ds.subjects {
        let test = Samples::from_epochs(&s.test, &ds.montage, Some((w, w)))?;
        let probs = predict_all(&best, &test)?;
        table.push(
            s.id.clone(),
            evaluation::ConfusionCounts::from_trial_probs(&probs, &test.labels, &test.trial_ids),
        )?;
    }
    let text = format!(
        "# pretrain on pooled training recordings, {}\n# epochs run: {}\n# train window accuracy: {train_acc:.4}\n# validation accuracy: {val_acc:.4}\n\n{}",
        ds.name,
        history.epochs("pretrain/train"),
        table.to_text()
    );
    finish(run, &text)
}

fn adapt_cmd(run: &RunDir, ds: &Dataset, cfg: &RunConfig, target: Option<&str>, modes: &[TransferMode]) -> Result<()> {
    let index = match target {
        Some(id) => ds
            .subjects
            .iter()
            .position(|s| s.id == id)
            .ok_or_else(|| Error::Data(format!("unknown target subject {id}")))?,
        None => ds.subjects.len() - 1,
    };
    let result = run_inter_subject_target(ds, index, &cfg.protocol(), modes)?;
    run.write_log(&result.history)?;
    let mut ckpt = ParamSet::new();
    prefixed(&mut ckpt, "extractor.", &result.extractor.params);
    for r in &result.adapt_reports {
        for f in &r.folds {
            prefixed(&mut ckpt, &format!("{}.fold{}.", r.mode, f.fold + 1), &f.head.params);
        }
    }
    run.write_checkpoint(&ckpt)?;

    let mut text = format!(
        "# target {}, sources {}\n# leakage checks passed: {}\n",
        result.target,
        result.pretrain_subjects.join(","),
        result.leakage_checks
    );
    for r in &result.adapt_reports {
        text.push_str(&format!(
            "\n# mode {}: accuracy {:.4}, fine-tune epochs {}\n",
            r.mode,
            r.accuracy(),
            r.finetune_epochs()
        ));
        text.push_str(&r.metrics_report()?.to_text());
    }
    finish(run, &text)
}
