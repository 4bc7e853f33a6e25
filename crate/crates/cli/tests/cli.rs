use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use persona_probe::classifier::NativeModel;
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_persona-probe");

fn cmd(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = cmd(args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// The directory printed on the `dir ...` line of `elicit`.
fn run_dir(stdout: &str) -> PathBuf {
    let line = stdout.lines().find_map(|l| l.strip_prefix("dir ")).unwrap();
    PathBuf::from(line)
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn line_count(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count()
}

fn write_model(dir: &Path) -> PathBuf {
    let path = dir.join("model.json");
    NativeModel::reference_lexicon().save(&path).unwrap();
    path
}

fn elicit_mock(root: &Path, extra: &[&str]) -> PathBuf {
    let mut args = vec!["elicit", "--backend", "mock", "--out", p(root)];
    args.extend_from_slice(extra);
    run_dir(&ok(&args))
}

#[test]
fn config_file_run_produces_five_hundred_generations() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    let out_dir = dir.path().join("runs");
    fs::write(
        &cfg,
        serde_json::json!({
            "backend": {"kind": "mock", "seed": 5},
            "n": 3,
            "seed": 5,
            "out_dir": out_dir,
        })
        .to_string(),
    )
    .unwrap();
    let stdout = ok(&["elicit", "--config", p(&cfg), "--backend", "mock", "--n", "10", "--seed", "77"]);
    assert!(stdout.contains("(Complete)"), "{stdout}");
    let run = run_dir(&stdout);
    assert!(run.starts_with(&out_dir));
    assert_eq!(line_count(&run.join("generations.jsonl")), 500);
    let m = manifest(&run);
    assert_eq!(m["n"], 10);
    assert_eq!(m["seed"], 77);
    assert_eq!(m["backend"]["seed"], 77);
    assert_eq!(m["status"], "complete");
}

#[test]
fn config_values_apply_when_no_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(
        &cfg,
        serde_json::json!({
            "backend": {"kind": "mock", "seed": 3},
            "n": 2,
            "seed": 3,
            "out_dir": dir.path().join("runs"),
            "model_id": "from-config",
        })
        .to_string(),
    )
    .unwrap();
    let run = run_dir(&ok(&["elicit", "--config", p(&cfg)]));
    let m = manifest(&run);
    assert_eq!(m["n"], 2);
    assert_eq!(m["seed"], 3);
    assert_eq!(m["model_id"], "from-config");
}

#[test]
fn missing_battery_is_a_config_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no-such-battery.json");
    let out = cmd(&["elicit", "--backend", "mock", "--battery", p(&missing), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains(p(&missing)), "{}", stderr(&out));

    let out = cmd(&["validate-battery", "--battery", p(&missing)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_flags_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = cmd(&["elicit", "--backend", "mock", "--n", "0", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = cmd(&["elicit", "--backend", "mock", "--effect", "0.9", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = cmd(&["elicit", "--backend", "http", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--endpoint"));
}

#[test]
fn validate_battery_accepts_builtin_and_rejects_duplicates() {
    let out = ok(&["validate-battery"]);
    assert!(out.contains("50 prompts"), "{out}");

    let dir = tempfile::tempdir().unwrap();
    let mut battery: Value =
        serde_json::from_str(include_str!("../../core/data/battery_normalized.json")).unwrap();
    let first = battery["prompts"][0].clone();
    battery["prompts"].as_array_mut().unwrap()[1] = first;
    let path = dir.path().join("dup.json");
    fs::write(&path, battery.to_string()).unwrap();
    let out = cmd(&["validate-battery", "--battery", p(&path)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn resume_by_id_of_a_complete_run_adds_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let run = elicit_mock(dir.path(), &["--n", "2", "--seed", "4"]);
    let before = fs::read(run.join("generations.jsonl")).unwrap();
    let id = run.file_name().unwrap().to_str().unwrap();
    let stdout = ok(&["elicit", "--resume", id, "--out", p(dir.path())]);
    assert!(stdout.contains("generated 100"), "{stdout}");
    assert_eq!(fs::read(run.join("generations.jsonl")).unwrap(), before);

    let out = run_cmd_missing_resume(dir.path());
    assert_eq!(out.status.code(), Some(2));
}

fn run_cmd_missing_resume(root: &Path) -> Output {
    cmd(&["elicit", "--resume", "does-not-exist", "--out", p(root)])
}

#[test]
fn resume_completes_only_missing_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let run = elicit_mock(dir.path(), &["--n", "3", "--seed", "21"]);
    let full = fs::read_to_string(run.join("generations.jsonl")).unwrap();
    let lines: Vec<&str> = full.lines().collect();
    // keep the first 60 records plus a torn line, as if the process died mid-write
    let mut partial = lines[..60].join("\n");
    partial.push_str("\n{\"prompt_id\":\"std.ab");
    fs::write(run.join("generations.jsonl"), partial).unwrap();
    let mut m = manifest(&run);
    m["status"] = Value::from("incomplete");
    fs::write(run.join("manifest.json"), m.to_string()).unwrap();

    let stdout = ok(&["elicit", "--resume", p(&run)]);
    assert!(stdout.contains("(Complete)"), "{stdout}");
    let resumed = fs::read_to_string(run.join("generations.jsonl")).unwrap();
    let resumed_lines: Vec<&str> = resumed.lines().collect();
    assert_eq!(resumed_lines.len(), 150);
    assert_eq!(resumed_lines[..60], lines[..60]);

    let strip = |text: &str| {
        let mut v: Vec<Value> = text
            .lines()
            .map(|l| {
                let mut v: Value = serde_json::from_str(l).unwrap();
                v.as_object_mut().unwrap().remove("created_at");
                v
            })
            .collect();
        v.sort_by_key(|r| (r["prompt_id"].as_str().unwrap().to_string(), r["completion_index"].as_u64().unwrap()));
        v
    };
    assert_eq!(strip(&resumed), strip(&full));
}

#[test]
fn score_analyze_and_every_report_kind() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path());
    let runs = dir.path().join("runs");
    elicit_mock(&runs, &["--n", "2", "--seed", "1", "--model-id", "base", "--family", "mock", "--parameter-count", "1000"]);
    elicit_mock(&runs, &["--n", "2", "--seed", "2", "--model-id", "tuned", "--family", "mock", "--parameter-count", "2000", "--effect", "0.1"]);
    let scored = ok(&["score", "--runs-dir", p(&runs), "--model", p(&model)]);
    assert_eq!(scored.lines().filter(|l| l.contains("scored 100")).count(), 2, "{scored}");

    let analysis: Value = serde_json::from_str(&ok(&["analyze", "--runs-dir", p(&runs)])).unwrap();
    assert_eq!(analysis["summaries"]["both"].as_array().unwrap().len(), 12);
    assert_eq!(analysis["activation_deltas"].as_array().unwrap().len(), 10);

    let report = |extra: &[&str]| {
        let mut args = vec!["report", "--runs-dir", p(&runs)];
        args.extend_from_slice(extra);
        ok(&args)
    };
    let summary = report(&["--kind", "summary"]);
    assert!(summary.contains("| Model | Openness |"), "{summary}");
    assert!(summary.contains("| base |") && summary.contains("| tuned |"));
    let csv = report(&["--kind", "summary", "--format", "csv", "--question-set", "standard"]);
    assert!(csv.starts_with("model_id,trait,question_set,category,mean,std,n,skipped"));
    assert!(report(&["--kind", "activation"]).contains("tuned"));
    assert!(report(&["--kind", "ranking"]).contains("### Openness"));
    let pairs = report(&["--kind", "pairs", "--pair", "base:tuned"]);
    assert!(pairs.contains("| base | tuned | Openness |"), "{pairs}");

    let plot_path = dir.path().join("plot.json");
    report(&["--kind", "plotdata", "--out", p(&plot_path)]);
    let plot: Value = serde_json::from_str(&fs::read_to_string(&plot_path).unwrap()).unwrap();
    assert_eq!(plot["format"], "persona-probe/plotdata/v1");
    assert_eq!(plot["scatter"].as_array().unwrap().len(), 10);

    let out = cmd(&["report", "--runs-dir", p(&runs), "--kind", "pairs", "--pair", "nobody:tuned"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nobody"));
    let out = cmd(&["report", "--runs-dir", p(&runs), "--kind", "pairs", "--pair", "no-colon"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ranking_report_is_stable_across_run_order() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path());
    let runs = dir.path().join("runs");
    let a = elicit_mock(&runs, &["--n", "2", "--seed", "1", "--model-id", "a"]);
    let b = elicit_mock(&runs, &["--n", "2", "--seed", "2", "--model-id", "b"]);
    let c = elicit_mock(&runs, &["--n", "2", "--seed", "3", "--model-id", "c"]);
    ok(&["score", "--runs-dir", p(&runs), "--model", p(&model)]);
    let forward = ok(&["report", "--kind", "ranking", "--format", "json", "--run", p(&a), "--run", p(&b), "--run", p(&c)]);
    let backward = ok(&["report", "--kind", "ranking", "--format", "json", "--run", p(&c), "--run", p(&a), "--run", p(&b)]);
    assert_eq!(forward, backward);
}

#[test]
fn unscored_runs_and_unreachable_services_fail() {
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("runs");
    let run = elicit_mock(&runs, &["--n", "1"]);
    let out = cmd(&["analyze", "--run", p(&run)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("not been scored"));

    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let url = format!("http://127.0.0.1:{port}");
    let out = cmd(&["score", "--run", p(&run), "--service", &url, "--timeout-secs", "2"]);
    assert_eq!(out.status.code(), Some(1));

    let out = cmd(&["score", "--run", p(&run)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn mixed_classifiers_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("runs");
    let a = elicit_mock(&runs, &["--n", "1", "--model-id", "a"]);
    let b = elicit_mock(&runs, &["--n", "1", "--model-id", "b"]);
    let lexicon = write_model(dir.path());
    let other = dir.path().join("other.json");
    NativeModel::zero(&["kind", "calm"]).save(&other).unwrap();
    ok(&["score", "--run", p(&a), "--model", p(&lexicon)]);
    ok(&["score", "--run", p(&b), "--model", p(&other)]);

    let out = cmd(&["report", "--kind", "summary", "--runs-dir", p(&runs)]);
    assert_ne!(out.status.code(), Some(0));
    assert!(stderr(&out).contains("classifier"), "{}", stderr(&out));

    // rescoring a run with a different classifier is refused too
    let out = cmd(&["score", "--run", p(&a), "--model", p(&other)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_writes_a_loadable_model() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("trained.json");
    let report = dir.path().join("report.json");
    let stdout = ok(&["train", "--out", p(&model), "--report", p(&report)]);
    assert!(stdout.starts_with("classifier sha256:"), "{stdout}");
    let first = fs::read(&model).unwrap();
    ok(&["train", "--out", p(&model)]);
    assert_eq!(fs::read(&model).unwrap(), first);
    let r: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["per_trait"].as_array().unwrap().len(), 5);
    NativeModel::load(&model).unwrap();
}
