use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn grouplift(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grouplift")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = grouplift(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> (i32, String) {
    let out = grouplift(args);
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small dataset with a train/test split and a grouping file.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["gen-data", "--out-dir", s(d), "--samples", "300", "--target-samples", "120", "--seed", "1", "--split", "0.8,0.2"]);
    ok(&["group", "--data", s(&d.join("source.csv")), "--groups", "3", "--out", s(&d.join("groups.txt"))]);
    dir
}

#[test]
fn gen_data_is_byte_identical_for_a_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        ok(&["gen-data", "--out-dir", s(d.path()), "--samples", "200", "--target-samples", "50", "--seed", "4", "--shift", "1.5", "--rotation", "15"]);
    }
    for f in ["source.csv", "target.csv", "spec.toml"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let spec = fs::read_to_string(a.path().join("spec.toml")).unwrap();
    assert!(spec.contains("shift = 1.5"));
}

#[test]
fn bad_split_is_a_usage_error_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let (c, err) = code(&["gen-data", "--out-dir", s(&out), "--split", "0.5,0.6"]);
    assert_eq!(c, 1);
    assert!(err.contains("split"), "{err}");
    assert!(!out.exists());
}

#[test]
fn config_file_feeds_the_generator() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[data]\nsamples = 40\ntarget_samples = 7\n").unwrap();
    let stdout = ok(&["--config", s(&cfg), "gen-data", "--out-dir", s(dir.path())]);
    assert!(stdout.contains("(40 rows)") && stdout.contains("(7 rows)"), "{stdout}");
    fs::write(&cfg, "[data]\nsample = 40\n").unwrap();
    assert_eq!(code(&["--config", s(&cfg), "gen-data", "--out-dir", s(dir.path())]).0, 1);
}

#[test]
fn grouping_schemes() {
    let w = workspace();
    let d = w.path();
    let grouped = fs::read_to_string(d.join("groups.txt")).unwrap();
    assert!(!grouped.is_empty());

    let stdout = ok(&["group", "--data", s(&d.join("source.csv")), "--groups", "3", "--out", s(&d.join("eq.txt")), "--weights", "equal"]);
    assert_eq!(stdout.matches("=1.000000").count(), 6, "{stdout}");

    let stdout = ok(&[
        "group", "--data", s(&d.join("source.csv")), "--groups", "3", "--out", s(&d.join("em.txt")),
        "--weights", "emphasized", "--group", "1", "--high", "2", "--low", "0.5",
    ]);
    assert_eq!(stdout.matches("=2.000000").count(), 3, "{stdout}");
    assert_eq!(stdout.matches("=0.500000").count(), 3, "{stdout}");

    let (c, _) = code(&["group", "--data", s(&d.join("source.csv")), "--groups", "3", "--out", s(&d.join("x.txt")), "--weights", "emphasized"]);
    assert_eq!(c, 1);
}

#[test]
fn training_reports_are_reproducible() {
    let w = workspace();
    let d = w.path();
    let run = |name: &str| {
        ok(&[
            "train-mnet", "--data", s(&d.join("source.train.csv")), "--test", s(&d.join("source.test.csv")),
            "--groups", s(&d.join("groups.txt")), "--out", s(&d.join("m.ckpt")), "--metrics", s(&d.join(name)),
            "--epochs", "2", "--trunk-units", "8,8", "--head-units", "4,4", "--seed", "3",
        ]);
        (fs::read(d.join("m.ckpt")).unwrap(), fs::read_to_string(d.join(name)).unwrap())
    };
    let (ck1, m1) = run("m1.csv");
    let (ck2, m2) = run("m2.csv");
    assert_eq!(ck1, ck2);
    assert_eq!(m1, m2);
    assert_eq!(m1.lines().count(), 3);
}

#[test]
fn sweep_writes_one_checkpoint_per_seed() {
    let w = workspace();
    let d = w.path();
    let stdout = ok(&[
        "train-mnet", "--data", s(&d.join("source.csv")), "--out", s(&d.join("m.ckpt")), "--epochs", "1",
        "--trunk-units", "4,4", "--head-units", "3", "--sweep", "seeds=2..4",
    ]);
    for seed in 2..=4 {
        assert!(d.join(format!("m.seed{seed}.ckpt")).exists());
        assert!(stdout.contains(&format!("seed={seed}")));
    }
}

#[test]
fn transfer_eval_and_mmd_run_end_to_end() {
    let w = workspace();
    let d = w.path();
    let ckpt = d.join("m.ckpt");
    ok(&[
        "train-mnet", "--data", s(&d.join("source.csv")), "--out", s(&ckpt), "--epochs", "2",
        "--trunk-units", "8,8", "--head-units", "4,4",
    ]);
    let report = ok(&[
        "transfer", "--model", s(&ckpt), "--source", s(&d.join("source.csv")), "--target", s(&d.join("target.csv")),
        "--source-attr", "a0", "--target-attr", "a1", "--epochs", "2", "--out", s(&d.join("t.ckpt")),
        "--metrics", s(&d.join("t.csv")), "--dump-embeddings", s(&d.join("emb")),
    ]);
    assert!(report.contains("alpha_rule=config"));
    assert!(report.contains("tnet_accuracy="));
    let metrics = fs::read_to_string(d.join("t.csv")).unwrap();
    assert!(metrics.starts_with("epoch,total,mmd:"));
    assert!(d.join("emb").join("adapted_layer1_target.csv").exists());

    let table = ok(&[
        "eval", "--data", s(&d.join("source.csv")), "--model", s(&ckpt), "--model", s(&ckpt), "--label", "x", "--label", "y",
    ]);
    assert!(table.starts_with("attribute,x,y,delta"), "{table}");
    assert!(table.lines().any(|l| l.starts_with("mean,")));

    let mmd = ok(&[
        "mmd", "--source", s(&d.join("source.csv")), "--target", s(&d.join("target.csv")), "--permutations", "20", "--seed", "1",
    ]);
    assert!(mmd.contains("mmd2=") && mmd.contains("p_value="), "{mmd}");
}

#[test]
fn gradcheck_passes() {
    let stdout = ok(&["gradcheck", "--instances", "5"]);
    assert_eq!(stdout.matches(",pass").count(), 4, "{stdout}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // usage
    assert_eq!(code(&["train-mnet"]).0, 1);
    assert_eq!(code(&["gradcheck", "--instances", "0"]).0, 1);
    let (c, err) = code(&["train-mnet", "--data", "x.csv", "--out", "m.ckpt", "--lr", "-1"]);
    assert_eq!(c, 1, "{err}");
    assert!(err.contains("learning_rate"));
    // data
    assert_eq!(code(&["train-mnet", "--data", s(&d.join("missing.csv")), "--out", s(&d.join("m"))]).0, 2);
    let bad = d.join("bad.csv");
    fs::write(&bad, "f0,f1,attr:a\n1,2,7\n").unwrap();
    assert_eq!(code(&["train-mnet", "--data", s(&bad), "--out", s(&d.join("m"))]).0, 2);
    let unlabeled = d.join("u.csv");
    fs::write(&unlabeled, "f0,f1\n1,2\n").unwrap();
    assert_eq!(code(&["train-mnet", "--data", s(&unlabeled), "--out", s(&d.join("m"))]).0, 2);
    assert_eq!(code(&["--version"]).0, 0);
}
