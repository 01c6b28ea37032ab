use std::path::Path;
use std::process::{Command, Output};

const SMALL: [&str; 8] = [
    "data.users=40",
    "data.seq_len=24",
    "model.buckets=64",
    "model.k=2",
    "model.hidden=[8, 4]",
    "train.epochs=2",
    "train.batch_size=64",
    "bench.repetitions=5",
];

fn genli(args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_genli"));
    cmd.args(args).env("RUST_LOG", "warn");
    cmd.output().unwrap()
}

fn with_small(mut args: Vec<String>) -> Vec<String> {
    for s in SMALL {
        args.extend(["--set".to_owned(), s.to_owned()]);
    }
    args
}

fn run_ok(args: Vec<String>) -> String {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = genli(&refs);
    assert!(out.status.success(), "{:?}: {}", args, String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> String {
    path.display().to_string()
}

fn pipeline(root: &Path) {
    let data = root.join("nested/data");
    let model = root.join("model");
    let eval = root.join("eval");
    run_ok(with_small(vec!["gen-data".into(), "--out".into(), p(&data)]));
    run_ok(with_small(vec!["train".into(), "--data".into(), p(&data), "--out".into(), p(&model)]));
    run_ok(vec![
        "eval".into(),
        "--model".into(),
        p(&model),
        "--data".into(),
        p(&data.join("valid.tsv")),
        "--out".into(),
        p(&eval),
    ]);
}

#[test]
fn pipeline_outputs_are_byte_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(a.path());
    pipeline(b.path());
    for f in [
        "nested/data/train.tsv",
        "nested/data/valid.tsv",
        "nested/data/item.vocab",
        "model/report.csv",
        "model/model.ckpt",
        "model/config.toml",
        "eval/eval.csv",
    ] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
    assert!(a.path().join("model/checkpoints").read_dir().unwrap().count() >= 2);
    let report = std::fs::read_to_string(a.path().join("model/report.csv")).unwrap();
    assert!(report.starts_with("epoch,loss_ctr,loss_implicit,loss_explicit,loss_total,valid_auc\n"));
    assert_eq!(report.lines().count(), 3);
}

#[test]
fn resume_continues_from_a_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    pipeline(tmp.path());
    let data = tmp.path().join("nested/data");
    let ckpt = tmp.path().join("model/checkpoints/epoch-000.ckpt");
    let resumed = tmp.path().join("resumed");
    run_ok(with_small(vec![
        "train".into(),
        "--data".into(),
        p(&data),
        "--out".into(),
        p(&resumed),
        "--resume".into(),
        p(&ckpt),
    ]));
    let full = std::fs::read_to_string(tmp.path().join("model/report.csv")).unwrap();
    let rest = std::fs::read_to_string(resumed.join("report.csv")).unwrap();
    assert_eq!(rest.lines().nth(1), full.lines().nth(2));
    assert!(
        std::fs::read(resumed.join("model.ckpt")).unwrap()
            == std::fs::read(tmp.path().join("model/model.ckpt")).unwrap()
    );
}

#[test]
fn exit_codes_follow_error_kinds() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = genli(&["train", "--data", "/nonexistent/data", "--out", &p(tmp.path())]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("does not exist"));

    let bad_key = genli(&["gen-data", "--out", &p(tmp.path()), "--set", "train.learning_rate=0.1"]);
    assert_eq!(bad_key.status.code(), Some(2));

    let bad_value = genli(&["gen-data", "--out", &p(tmp.path()), "--set", "data.users=0"]);
    assert_eq!(bad_value.status.code(), Some(2));

    let data = tmp.path().join("broken");
    std::fs::create_dir_all(&data).unwrap();
    for f in ["train.tsv", "valid.tsv"] {
        std::fs::write(data.join(f), "not\ta\trecord\n").unwrap();
    }
    for f in ["item.vocab", "category.vocab"] {
        std::fs::write(data.join(f), "a\t1\n").unwrap();
    }
    let broken = genli(&["train", "--data", &p(&data), "--out", &p(&tmp.path().join("m"))]);
    assert_eq!(broken.status.code(), Some(3), "{}", String::from_utf8_lossy(&broken.stderr));

    let usage = genli(&["train"]);
    assert_eq!(usage.status.code(), Some(2));
}

#[test]
fn help_lists_config_keys() {
    let out = run_ok(vec!["--help".into()]);
    assert!(out.contains("train.lr"));
    assert!(out.contains("published setup"));
}

#[test]
fn config_file_and_overrides_compose() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, "[data]\nusers = 30\nseq_len = 20\n[train]\nlr = 0.05\n").unwrap();
    let out = tmp.path().join("d");
    run_ok(vec!["gen-data".into(), "-c".into(), p(&cfg), "--set".into(), "data.users=25".into(), "-o".into(), p(&out)]);
    let echoed = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(echoed.contains("users = 25"));
    assert!(echoed.contains("lr = 0.05"));
    assert!(echoed.contains("seq_len = 20"));
}

#[test]
fn bench_and_plot_write_their_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("bench");
    let mut args = with_small(vec!["bench".into(), "--suite".into(), "scoring".into(), "--out".into(), p(&out)]);
    for s in ["bench.lengths=[256, 512]", "bench.widths=[8, 16]", "bench.min_rep_ns=100000", "bench.warmup=1"] {
        args.extend(["--set".into(), s.into()]);
    }
    run_ok(args);
    for f in ["scoring.csv", "scoring_detail.csv", "scoring_summary.csv", "config.toml"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let svg = tmp.path().join("chart.svg");
    run_ok(vec![
        "plot".into(),
        "--input".into(),
        p(&out.join("scoring.csv")),
        "--out".into(),
        p(&svg),
        "--x".into(),
        "L".into(),
        "--y".into(),
        "ns_per_behavior".into(),
        "--series".into(),
        "method".into(),
        "--filter".into(),
        "d_h=8".into(),
    ]);
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));
}
