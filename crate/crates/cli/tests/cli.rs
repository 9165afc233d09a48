use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> String {
    let p: PathBuf = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/toy")
        .join(name);
    p.to_str().unwrap().to_owned()
}

fn lcerank(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lcerank"))
        .current_dir(dir)
        .env("RUST_LOG", "off")
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn perfect_oracle_run_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let qrels = fixture("qrels.txt");
    assert!(
        lcerank(d, &["index", "--corpus", &fixture("corpus.tsv"), "--output", "i.bin"])
            .status
            .success()
    );
    let out = lcerank(
        d,
        &[
            "retrieve",
            "--index",
            "i.bin",
            "--queries",
            &fixture("queries.tsv"),
            "--retriever",
            "oracle_mix",
            "--alpha",
            "1000",
            "--qrels",
            &qrels,
            "--output",
            "o.run",
        ],
    );
    assert!(out.status.success());
    let out = lcerank(d, &["eval", "--run", "o.run", "--qrels", &qrels, "--output", "e.csv"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "MRR@100 1.000000");
    assert!(d.join("e.csv.config").exists());
}

#[test]
fn oracle_mix_without_qrels_fails() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(
        lcerank(d, &["index", "--corpus", &fixture("corpus.tsv"), "--output", "i.bin"])
            .status
            .success()
    );
    let out = lcerank(
        d,
        &[
            "retrieve",
            "--index",
            "i.bin",
            "--queries",
            &fixture("queries.tsv"),
            "--retriever",
            "oracle_mix",
            "--output",
            "o.run",
        ],
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("qrels"));
    assert!(!d.join("o.run").exists());
}

#[test]
fn bad_invocations_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(!lcerank(d, &["frobnicate"]).status.success());
    assert!(!lcerank(d, &["eval", "--run", "x.run"]).status.success());
    let out = lcerank(
        d,
        &[
            "eval",
            "--run",
            "missing.run",
            "--qrels",
            &fixture("qrels.txt"),
            "--output",
            "x.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error: ") && err.contains("missing.run"), "{err}");
}
