use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::sync::Arc;

use clarify_core::backend::wire::NdjsonServer;
use clarify_core::backend::CoOccurModel;
use clarify_core::schema::FeatureSchema;

fn clarify(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clarify"))
        .args(args)
        .env_remove("CLARIFY_SCHEMA")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes a synthetic corpus and trains a model on it.
fn prepared(dir: &Path) {
    ok(&clarify(&[
        "synth",
        "--kind",
        "ambiguous",
        "--seed",
        "3",
        "--train",
        "300",
        "--eval",
        "40",
        "--out-dir",
        p(dir),
    ]));
    let out = ok(&clarify(&[
        "train",
        "--instances",
        p(&dir.join("instances.jsonl")),
        "--alpha",
        "0.1",
        "--out",
        p(&dir.join("model.co")),
    ]));
    assert!(out.contains("trained on 300 instances"), "{out}");
}

#[test]
fn synth_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path());
    let report = dir.path().join("out.md");
    let (model, expressions, objects) = (
        dir.path().join("model.co"),
        dir.path().join("expressions.jsonl"),
        dir.path().join("objects.jsonl"),
    );
    let args = [
        "eval",
        "--backend",
        "cooccur",
        "--model",
        p(&model),
        "--expressions",
        p(&expressions),
        "--objects",
        p(&objects),
        "--conditions",
        "all",
        "--theta",
        "0.65",
        "--budget",
        "2",
        "--seed",
        "42",
        "--report",
        p(&report),
    ];
    ok(&clarify(&args));
    let md = std::fs::read_to_string(&report).unwrap();
    assert_eq!(md.lines().count(), 6, "{md}");
    assert!(md.lines().nth(2).unwrap().starts_with("| none |"));
    ok(&clarify(&args));
    assert_eq!(std::fs::read_to_string(&report).unwrap(), md);

    let csv = dir.path().join("out.csv");
    let mut csv_args = args.to_vec();
    *csv_args.last_mut().unwrap() = p(&csv);
    ok(&clarify(&csv_args));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("condition,r_h1,r_h3,l_h1,l_h3,mean_questions,episodes,faults\n"));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn eval_over_external_backend() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path());
    let schema = Arc::new(FeatureSchema::reference());
    let model = CoOccurModel::load(schema, dir.path().join("model.co")).unwrap();
    let server = NdjsonServer::start(TcpListener::bind("127.0.0.1:0").unwrap(), Arc::new(model)).unwrap();
    let out = ok(&clarify(&[
        "eval",
        "--backend",
        "external",
        "--endpoint",
        &server.endpoint(),
        "--expressions",
        p(&dir.path().join("expressions.jsonl")),
        "--objects",
        p(&dir.path().join("objects.jsonl")),
        "--conditions",
        "none,informative",
        "--format",
        "csv",
    ]));
    let lines: Vec<_> = out.lines().collect();
    assert_eq!(lines.len(), 3, "{out}");
    assert!(lines[2].starts_with("iterative+informative,"));
    assert!(lines[2].ends_with(",40,0"), "{out}");
}

#[test]
fn argument_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.jsonl");
    let out = clarify(&[
        "train",
        "--instances",
        p(&missing),
        "--out",
        p(&dir.path().join("m.co")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no such file"));

    prepared(dir.path());
    let instances = dir.path().join("instances.jsonl");
    let out = clarify(&["train", "--instances", p(&instances), "--alpha", "-1", "--out", "m.co"]);
    assert_eq!(out.status.code(), Some(2));

    let out = clarify(&[
        "eval",
        "--model",
        p(&dir.path().join("model.co")),
        "--endpoint",
        "tcp://127.0.0.1:1",
        "--expressions",
        p(&dir.path().join("expressions.jsonl")),
        "--objects",
        p(&dir.path().join("objects.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(2));

    // the random condition needs an explicit seed
    let out = clarify(&[
        "eval",
        "--model",
        p(&dir.path().join("model.co")),
        "--expressions",
        p(&dir.path().join("expressions.jsonl")),
        "--objects",
        p(&dir.path().join("objects.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
}

#[test]
fn schema_env_fallback() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_clarify"))
        .args([
            "train",
            "--instances",
            p(&dir.path().join("instances.jsonl")),
            "--out",
            p(&dir.path().join("m.co")),
        ])
        .env("CLARIFY_SCHEMA", dir.path().join("missing-schema.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let schema_path = dir.path().join("schema.json");
    std::fs::write(&schema_path, FeatureSchema::reference().to_json()).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_clarify"))
        .args([
            "train",
            "--instances",
            p(&dir.path().join("instances.jsonl")),
            "--out",
            p(&dir.path().join("m.co")),
        ])
        .env("CLARIFY_SCHEMA", &schema_path)
        .output()
        .unwrap();
    ok(&out);
}

#[test]
fn ask_reads_answers_from_stdin() {
    let dir = tempfile::tempdir().unwrap();
    ok(&clarify(&[
        "synth",
        "--kind",
        "deterministic",
        "--seed",
        "1",
        "--train",
        "200",
        "--out-dir",
        p(dir.path()),
    ]));
    ok(&clarify(&[
        "train",
        "--instances",
        p(&dir.path().join("instances.jsonl")),
        "--alpha",
        "0",
        "--out",
        p(&dir.path().join("m.co")),
    ]));
    let mut child = Command::new(env!("CARGO_BIN_EXE_clarify"))
        .args(["ask", "--model", p(&dir.path().join("m.co")), "--text", "the bowl"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    use std::io::Write;
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"granite\nglass\ndirty\n")
        .unwrap();
    let out = ok(&child.wait_with_output().unwrap());
    assert!(out.contains("What is the object's material?"), "{out}");
    assert!(out.contains("`granite` is not a material value"), "{out}");
    assert!(
        out.contains("room: kitchen  location: sink  (2 answered, 0 skipped)"),
        "{out}"
    );
}
