use std::path::Path;
use std::process::{Command, Output};

fn dadlnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dadlnet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.toml");
    std::fs::write(
        &path,
        "[synth]\nn_subjects = 3\nsessions = 2\ntrials = 10\nfs = 32.0\ntimesteps = 32\nfreq_hz = 6.0\n\
         [model]\nfs = 32.0\nfilters = [4, 8, 8, 8]\ntemporal_pools = [2, 2, 1, 1]\n\
         [train]\nmax_epochs = 2\nbatch_size = 16\nstage_epochs = [2, 2, 2]\nbuffer_dim = 8\nadapter_dim = 4\n",
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = dadlnet(&[
            "synth",
            "--subjects",
            "3",
            "--seed",
            "7",
            "--config",
            &cfg,
            "--out-dir",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let fa = files(&a);
    assert_eq!(fa, files(&b));
    let names: Vec<&str> = fa.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(
        names,
        vec![
            "S01_s1.eeg3",
            "S01_s2.eeg3",
            "S02_s1.eeg3",
            "S02_s2.eeg3",
            "S03_s1.eeg3",
            "S03_s2.eeg3",
            "config.toml",
            "manifest.txt",
            "montage.txt"
        ]
    );
    let snapshot = std::fs::read_to_string(a.join("config.toml")).unwrap();
    assert!(snapshot.contains("seed = 7"));
}

#[test]
fn adapt_ntf_reports_no_finetune_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    let o = dadlnet(&[
        "adapt",
        "--mode",
        "ntf",
        "--config",
        &cfg,
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("# mode ntf"), "{report}");
    assert!(report.contains("fine-tune epochs 0"), "{report}");
    for f in ["config.toml", "log.tsv", "checkpoint.dadl", "report.txt"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let printed = dadlnet(&["report", out.to_str().unwrap()]);
    assert_eq!(String::from_utf8_lossy(&printed.stdout), report);
}

#[test]
fn pretrain_and_evaluate_from_a_manifest_leave_inputs_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let data = dir.path().join("data");
    assert!(
        dadlnet(&["synth", "--config", &cfg, "--out-dir", data.to_str().unwrap()])
            .status
            .success()
    );
    let before = files(&data);
    let manifest = data.join("manifest.txt");
    let run = dir.path().join("pre");
    let o = dadlnet(&[
        "pretrain",
        "--manifest",
        manifest.to_str().unwrap(),
        "--config",
        &cfg,
        "--out-dir",
        run.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log = std::fs::read_to_string(run.join("log.tsv")).unwrap();
    assert_eq!(log.lines().next().unwrap(), "epoch\tsplit\tloss\tacc");
    assert_eq!(log.lines().count(), 1 + 2 * 2);

    let eval = dir.path().join("eval");
    let o = dadlnet(&[
        "evaluate",
        "--protocol",
        "intra",
        "--scheme",
        "s2",
        "--manifest",
        manifest.to_str().unwrap(),
        "--config",
        &cfg,
        "--out-dir",
        eval.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(eval.join("report.txt")).unwrap();
    assert!(report.contains("(s2)"));
    assert_eq!(files(&data), before);
}

#[test]
fn errors_are_one_line_with_a_kind() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[train]\nlearning_rate = 1\n").unwrap();
    let o = dadlnet(&[
        "pretrain",
        "--config",
        bad.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    let line = err.lines().last().unwrap();
    assert!(line.starts_with("error[config]: "), "{err}");
    assert!(line.contains("learning_rate") && line.contains("lr"), "{line}");

    let o = dadlnet(&["evaluate", "--scheme", "s9", "--out-dir", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("error[invalid-argument]"));

    let o = dadlnet(&["report", dir.path().join("nowhere").to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error[io]"));
}
