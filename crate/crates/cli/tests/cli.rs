use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const FIG4_QUESTION: &str =
    "The national anthem Afghan National Anthem is from the country which practices what religions?";

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name).display().to_string()
}

fn rtsog(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rtsog")).args(args).env_remove("RUST_LOG").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = rtsog(args);
    assert!(out.status.success(), "{args:?}\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fig4_ask() -> Vec<String> {
    let kg = fixture("fig4.tsv");
    ["ask", "--kg", &kg, "--question", FIG4_QUESTION, "--topic", "Afghan_National_Anthem", "--backend", "lexical"]
        .iter()
        .map(|s| s.to_string())
        .chain(["--target".into(), "Sunni_Islam".into()])
        .collect()
}

fn args(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

fn manifest_value(text: &str, key: &str) -> Option<String> {
    text.lines().find_map(|l| l.split_once(" = ").filter(|(k, _)| *k == key).map(|(_, v)| v.to_string()))
}

#[test]
fn ask_answers_the_anthem_question() {
    let stdout = ok(&args(&fig4_ask()));
    let json: Value = serde_json::from_str(&stdout).unwrap();
    assert!(json["answers"].as_array().unwrap().iter().any(|a| a == "Sunni_Islam"), "{stdout}");
    assert!(json.get("trees").is_none() || json["trees"].is_null());
    let mut with_tree = fig4_ask();
    with_tree.push("--dump-tree".into());
    let json: Value = serde_json::from_str(&ok(&args(&with_tree))).unwrap();
    assert_eq!(json["trees"].as_array().unwrap().len(), 1);
}

#[test]
fn usage_errors_exit_one() {
    let out = rtsog(&["eval", "--kg", &fixture("mini_kg.tsv")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("usage"));
    assert_eq!(rtsog(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(rtsog(&["ask", "--H", "lots"]).status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_two_with_a_diagnostic() {
    let mut a = fig4_ask();
    a[2] = "/nonexistent/graph.tsv".into();
    let out = rtsog(&args(&a));
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let diag: Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert!(diag["error"]["kind"].is_string() && diag["error"]["message"].is_string());
}

#[test]
fn flags_beat_config_beat_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.conf");
    fs::write(&config, "# overrides\nH = 3\nK = 4\n").unwrap();
    let run = |extra: &[&str]| {
        let manifest = dir.path().join("m.txt");
        let mut a = fig4_ask();
        a.extend(["--manifest".into(), path_str(&manifest).into()]);
        a.extend(extra.iter().map(|s| s.to_string()));
        ok(&args(&a));
        fs::read_to_string(manifest).unwrap()
    };
    let defaults = run(&[]);
    assert_eq!(manifest_value(&defaults, "H").as_deref(), Some("24"));
    assert_eq!(manifest_value(&defaults, "b").as_deref(), Some("7"));
    let c = path_str(&config);
    let from_file = run(&["--config", c]);
    assert_eq!(manifest_value(&from_file, "H").as_deref(), Some("3"));
    assert_eq!(manifest_value(&from_file, "K").as_deref(), Some("4"));
    let flagged = run(&["--config", c, "--H", "5"]);
    assert_eq!(manifest_value(&flagged, "H").as_deref(), Some("5"));
    assert_eq!(manifest_value(&flagged, "K").as_deref(), Some("4"));
    assert!(defaults.starts_with("# rtsog ask manifest\n# timestamp = "));
}

#[test]
fn batch_commands_are_deterministic() {
    let kg = fixture("mini_kg.tsv");
    let ds = fixture("mini.jsonl");
    let eval = ["eval", "--kg", &kg, "--dataset", &ds, "--backend", "lexical"];
    assert_eq!(ok(&eval), ok(&eval));
    let bon = ["eval", "--kg", &kg, "--dataset", &ds, "--strategy", "best-of-n", "--temperature", "0.5", "--seed", "9"];
    assert_eq!(ok(&bon), ok(&bon));
    let report: Value = serde_json::from_str(&ok(&eval)).unwrap();
    assert_eq!(report["em"], 1.0);
    assert_eq!(report["questions"], 25);
}

#[test]
fn record_then_replay_gives_the_same_answer() {
    let dir = tempfile::tempdir().unwrap();
    let fixtures = dir.path().join("fig4.replay.jsonl");
    let mut record = fig4_ask();
    record[0] = "record".into();
    record.extend(["--fixtures".into(), path_str(&fixtures).into()]);
    let recorded = ok(&args(&record));
    assert!(fs::read_to_string(&fixtures).unwrap().lines().count() > 3);
    let mut replay = fig4_ask();
    let backend = replay.iter().position(|a| a == "lexical").unwrap();
    replay[backend] = "replay".into();
    replay.extend(["--fixtures".into(), path_str(&fixtures).into()]);
    let replayed = ok(&args(&replay));
    assert_eq!(recorded, replayed);
    assert_eq!(recorded, ok(&args(&fig4_ask())));

    let missing = dir.path().join("none.jsonl");
    fs::write(&missing, "").unwrap();
    replay.pop();
    replay.push(path_str(&missing).into());
    assert_eq!(rtsog(&args(&replay)).status.code(), Some(2), "an unrecorded call is a runtime error");
}

#[test]
fn record_a_dataset_then_replay_it() {
    let dir = tempfile::tempdir().unwrap();
    let fixtures = dir.path().join("mini.replay.jsonl");
    let (kg, ds) = (fixture("mini_kg.tsv"), fixture("mini.jsonl"));
    let f = path_str(&fixtures);
    let recorded = ok(&["record", "--kg", &kg, "--dataset", &ds, "--fixtures", f, "--concurrency", "4"]);
    let replayed = ok(&["eval", "--kg", &kg, "--dataset", &ds, "--backend", "replay", "--fixtures", f]);
    assert_eq!(recorded, replayed);
    let usage = rtsog(&["record", "--kg", &kg, "--fixtures", f]);
    assert_eq!(usage.status.code(), Some(1));
}

#[test]
fn compare_prints_one_row_per_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cmp.json");
    let (kg, ds) = (fixture("mini_kg.tsv"), fixture("mini.jsonl"));
    let table = ok(&[
        "compare", "--kg", &kg, "--dataset", &ds, "--strategies", "rtsog,beam,greedy", "--budget", "200", "--out",
        path_str(&out),
    ]);
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 3, "{table}");
    for (row, name) in rows.iter().zip(["rtsog", "beam", "greedy"]) {
        assert!(row.starts_with(name), "{row}");
    }
    let doc: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    for (row, report) in doc["table"]["rows"].as_array().unwrap().iter().zip(doc["reports"].as_array().unwrap()) {
        let per_question: Vec<u64> = report["per_question"]
            .as_array()
            .unwrap()
            .iter()
            .map(|q| {
                let ledger = q["ledger"].as_object().unwrap();
                let by_kind: u64 = ledger.iter().filter(|(k, _)| *k != "total").map(|(_, v)| v.as_u64().unwrap()).sum();
                assert_eq!(ledger["total"].as_u64(), Some(by_kind));
                by_kind
            })
            .collect();
        let total: u64 = per_question.iter().sum();
        assert!((row["mean_total"].as_f64().unwrap() - total as f64 / 25.0).abs() < 1e-12);
        assert_eq!(row["max_total"].as_u64().unwrap(), *per_question.iter().max().unwrap());
        assert!(per_question.iter().all(|&t| t <= 200));
    }
}

#[test]
fn sweep_prints_csv() {
    let (kg, ds) = (fixture("mini_kg.tsv"), fixture("mini.jsonl"));
    let csv = ok(&["sweep", "--kg", &kg, "--dataset", &ds, "--axis", "H", "--values", "6,24"]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "axis_value,em,mean_calls,total_calls");
    assert!(lines[1].starts_with("6,") && lines[2].starts_with("24,1,"), "{csv}");
}

#[test]
fn ingest_normalizes_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("g.nt");
    fs::write(
        &src,
        "<http://x/A> <http://x/r> <http://x/B> .\n<http://x/A> <http://x/r> <http://x/B> .\n<http://x/B> <http://x/s> <http://x/C> .\n",
    )
    .unwrap();
    let dst = dir.path().join("g.tsv");
    let stats = ok(&["ingest", "--kg", path_str(&src), "--out", path_str(&dst)]);
    let stats: Value = serde_json::from_str(stats.trim()).unwrap();
    assert_eq!(stats["rows_read"], 3);
    assert_eq!(stats["duplicates_dropped"], 1);
    assert_eq!(stats["triples"], 2);
    assert_eq!(stats["entities"], 3);
    let tsv = fs::read_to_string(&dst).unwrap();
    assert_eq!(tsv.lines().filter(|l| !l.starts_with('#') && !l.is_empty()).count(), 2);
    assert_eq!(rtsog(&["ingest", "--kg", path_str(&src)]).status.code(), Some(1));
}

#[test]
fn a_manifest_reproduces_its_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first.json");
    let mut a = fig4_ask();
    a.extend(["--H".into(), "7".into(), "--seed".into(), "3".into(), "--out".into(), path_str(&first).into()]);
    ok(&args(&a));
    let manifest = dir.path().join("first.json.manifest");
    assert!(manifest.exists());
    let second = dir.path().join("second.json");
    ok(&["ask", "--config", path_str(&manifest), "--out", path_str(&second)]);
    assert_eq!(fs::read(&first).unwrap(), fs::read(&second).unwrap());
}
