use std::path::Path;
use std::process::{Command, Output};

fn ncws(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ncws"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn ncws")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn synth(dir: &Path, n: &str) {
    ok(&ncws(dir, &["synth", "--n", n, "--seed", "3", "--output", "s.jsonl"]));
}

#[test]
fn synth_writes_corpus_and_truth() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&ncws(
        dir.path(),
        &["synth", "--n", "300", "--output", "s.jsonl"],
    ));
    assert!(stdout.contains("300 reviews"), "{stdout}");
    let truth = std::fs::read_to_string(dir.path().join("s.truth.csv")).unwrap();
    assert!(truth.starts_with("id,true_label\n"));
    assert_eq!(truth.lines().count(), 301);

    let ingest = ok(&ncws(dir.path(), &["ingest", "--input", "s.jsonl"]));
    assert_eq!(ingest.lines().next(), stdout.lines().next());
}

#[test]
fn compare_writes_reports_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "600");
    let args = |out: &'static str| {
        vec![
            "compare", "--input", "s.jsonl", "--truth", "s.truth.csv", "--features",
            "covariates", "--folds", "3", "--epochs", "5", "--lr", "0.01", "--out", out,
        ]
    };
    let stdout = ok(&ncws(dir.path(), &args("a")));
    assert!(stdout.contains("NCWS"), "{stdout}");
    ok(&ncws(dir.path(), &args("b")));
    for f in [
        "config.txt",
        "report.txt",
        "metrics.csv",
        "significance.csv",
        "flips.csv",
        "histograms.csv",
        "age_curve.csv",
    ] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert!(!a.is_empty(), "{f} is empty");
        assert_eq!(a, b, "{f} differs between runs");
    }
}

#[test]
fn compare_config_file_and_set_override() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "400");
    std::fs::write(
        dir.path().join("exp.conf"),
        "# small run\ndata.input = s.jsonl\ndata.folds = 2\nfeatures.set = covariates\ntrain.epochs = 3\n",
    )
    .unwrap();
    ok(&ncws(
        dir.path(),
        &["compare", "--config", "exp.conf", "--set", "risk.approaches=naive,ncws", "--out", "r"],
    ));
    let config = std::fs::read_to_string(dir.path().join("r/config.txt")).unwrap();
    assert!(config.contains("risk.approaches = naive,ncws"), "{config}");
    assert!(config.contains("data.folds = 2"), "{config}");
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = ncws(dir.path(), &["compare", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    let out = ncws(dir.path(), &["train", "--input", "x.jsonl"]);
    assert_eq!(out.status.code(), Some(2), "missing --save-model");
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = ncws(dir.path(), &["ingest", "--input", "missing.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error: cannot read missing.jsonl"), "{stderr}");

    synth(dir.path(), "100");
    let out = ncws(
        dir.path(),
        &["compare", "--input", "s.jsonl", "--set", "risk.bogus=1", "--out", "r"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("risk.bogus"));
}

#[test]
fn train_then_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "400");
    ok(&ncws(
        dir.path(),
        &[
            "train", "--input", "s.jsonl", "--features", "structural", "--risk", "naive",
            "--epochs", "5", "--save-model", "m.json",
        ],
    ));
    let stdout = ok(&ncws(
        dir.path(),
        &[
            "evaluate", "--input", "s.jsonl", "--load-model", "m.json", "--truth",
            "s.truth.csv", "--predictions", "p.csv",
        ],
    ));
    assert!(stdout.contains("observed") && stdout.contains("truth"), "{stdout}");
    let preds = std::fs::read_to_string(dir.path().join("p.csv")).unwrap();
    assert_eq!(preds.lines().next(), Some("id,score,squashed,prediction"));
    assert_eq!(preds.lines().count(), 401);
}

#[test]
fn featurize_dense_and_sparse() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "50");
    ok(&ncws(
        dir.path(),
        &["featurize", "--input", "s.jsonl", "--features", "structural", "--output", "f.csv"],
    ));
    let dense = std::fs::read_to_string(dir.path().join("f.csv")).unwrap();
    assert_eq!(dense.lines().next(), Some("id,label,len,nos,asl,poqs"));
    assert_eq!(dense.lines().count(), 51);

    ok(&ncws(
        dir.path(),
        &["featurize", "--input", "s.jsonl", "--features", "ugr", "--output", "u.csv"],
    ));
    let sparse = std::fs::read_to_string(dir.path().join("u.csv")).unwrap();
    assert_eq!(sparse.lines().next(), Some("row,col,value"));
    let vocab = std::fs::read_to_string(dir.path().join("u.vocab.csv")).unwrap();
    assert_eq!(vocab.lines().next(), Some("col,term,df"));
    assert!(vocab.lines().count() > 1);
}

#[test]
fn correlate_reports_both_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "2000");
    let stdout = ok(&ncws(
        dir.path(),
        &["correlate", "--input", "s.jsonl", "--output", "c.csv"],
    ));
    assert!(stdout.contains("Pearson") && stdout.contains("Spearman"), "{stdout}");
    let csv = std::fs::read_to_string(dir.path().join("c.csv")).unwrap();
    assert!(csv.starts_with("config_hash,age_start,helpful_probability,review_count"));
}
