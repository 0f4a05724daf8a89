use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mfmtensor"))
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = run(args, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const QUICK: &str = "n_iter = 120\nburn_in = 10\ninit_clusters = 2\n";

#[test]
fn simulate_writes_designs_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["simulate", "--design", "1", "--n-rep", "1", "--seed", "5", "--out", "d1"], d);
    let data = json(d.join("d1/rep_000/data.json"));
    let units = data.as_array().unwrap();
    assert_eq!(units.len(), 150);
    assert_eq!(units[0]["dims"], serde_json::json!([3, 3, 4]));
    ok(&["simulate", "--design", "2", "--n-rep", "1", "--seed", "5", "--out", "d2"], d);
    assert_eq!(json(d.join("d2/rep_000/data.json"))[0]["dims"], serde_json::json!([11, 12, 4]));
    ok(&["simulate", "--design", "1", "--n-rep", "1", "--seed", "5", "--out", "again"], d);
    for f in ["data.json", "truth.json"] {
        assert_eq!(
            std::fs::read(d.join("d1/rep_000").join(f)).unwrap(),
            std::fs::read(d.join("again/rep_000").join(f)).unwrap()
        );
    }
    // The echo file reproduces the run on its own.
    ok(&["simulate", "--config", "d1/config_echo.toml", "--out", "echo"], d);
    assert_eq!(std::fs::read(d.join("d1/rep_000/data.json")).unwrap(), std::fs::read(d.join("echo/rep_000/data.json")).unwrap());
}

#[test]
fn seed_is_mandatory() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["simulate", "--design", "1", "--out", "x"], dir.path()).status.code(), Some(1));
    assert_eq!(run(&["fit", "--data", "x.json", "--out", "x"], dir.path()).status.code(), Some(1));
}

fn one_unit_dataset(d: &Path) {
    std::fs::write(d.join("one.json"), r#"[{"unit_id":"solo","dims":[2,2,2],"counts":[3,1,0,2,5,1,0,4]}]"#).unwrap();
}

#[test]
fn fit_single_unit_emits_one_row_label_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    one_unit_dataset(d);
    std::fs::write(d.join("quick.toml"), QUICK).unwrap();
    ok(&["fit", "--data", "one.json", "--config", "quick.toml", "--seed", "1", "--out", "fit"], d);
    for dirn in ["angle", "distance", "quarter"] {
        let text = std::fs::read_to_string(d.join(format!("fit/labels_{dirn}.csv"))).unwrap();
        assert_eq!(text.lines().collect::<Vec<_>>(), vec!["unit_id,label", "solo,1"]);
    }
    let chain = std::fs::read_to_string(d.join("fit/chain.jsonl")).unwrap();
    assert_eq!(chain.lines().count(), 1 + 60);
}

#[test]
fn default_schedule_keeps_three_thousand_samples() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    one_unit_dataset(d);
    ok(&["fit", "--data", "one.json", "--seed", "1", "--out", "fit"], d);
    let s = json(d.join("fit/summary.json"));
    assert_eq!(s["n_samples"], 5000);
    assert_eq!(s["n_post_burn_in"], 3000);
}

#[test]
fn seed_changes_chain_and_echo_reproduces_it() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["simulate", "--design", "1", "--seed", "2", "--out", "sim"], d);
    std::fs::write(d.join("quick.toml"), QUICK).unwrap();
    let data = "sim/rep_000/data.json";
    ok(&["fit", "--data", data, "--config", "quick.toml", "--seed", "1", "--out", "a"], d);
    ok(&["fit", "--data", data, "--config", "quick.toml", "--seed", "2", "--out", "b"], d);
    ok(&["fit", "--data", data, "--config", "a/config_echo.toml", "--seed", "1", "--out", "c"], d);
    let read = |p: &str| std::fs::read(d.join(p).join("chain.jsonl")).unwrap();
    assert_ne!(read("a"), read("b"));
    assert_eq!(read("a"), read("c"));
}

#[test]
fn evaluate_against_truth_self_and_missing() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["simulate", "--design", "1", "--seed", "3", "--out", "sim"], d);
    std::fs::write(d.join("quick.toml"), QUICK).unwrap();
    ok(&["fit", "--data", "sim/rep_000/data.json", "--config", "quick.toml", "--seed", "1", "--out", "fit"], d);
    ok(&["evaluate", "--fit", "fit", "--other", "fit", "--out", "self"], d);
    let r = json(d.join("self/report.json"));
    for dr in r["directions"].as_array().unwrap() {
        assert_eq!(dr["rand_index"], 1.0);
        assert_eq!(dr["wasserstein_to_truth"], 0.0);
    }
    ok(&["evaluate", "--fit", "fit", "--truth", "sim/rep_000/truth.json", "--out", "ev"], d);
    let csv = std::fs::read_to_string(d.join("ev/report.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("direction,rand_index,k_mode,wasserstein"));
    assert_eq!(csv.lines().count(), 4);
    let out = run(&["evaluate", "--fit", "fit", "--truth", "missing.json", "--out", "ev2"], d);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));
    assert_eq!(run(&["evaluate", "--fit", "fit", "--out", "ev3"], d).status.code(), Some(1));
}

#[test]
fn ingest_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("three.csv"), "player_id,x,y,period\nA,25,10,1\nA,20,12,2\nA,30,8,4\n").unwrap();
    ok(&["ingest", "--input", "three.csv", "--min-attempts", "0", "--out", "a"], d);
    let data = json(d.join("a/dataset.json"));
    assert_eq!(data.as_array().unwrap().len(), 1);
    assert_eq!(data[0]["dims"], serde_json::json!([11, 12, 4]));
    let total: u64 = data[0]["counts"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(total, 3);
    assert_eq!(json(d.join("a/rejections.json"))["rejected"], serde_json::json!({}));

    std::fs::write(d.join("ot.csv"), "player_id,x,y,period\nA,25,10,1\nA,20,12,5\nA,30,8,4\n").unwrap();
    ok(&["ingest", "--input", "ot.csv", "--min-attempts", "0", "--out", "b"], d);
    assert_eq!(json(d.join("b/rejections.json"))["rejected"]["overtime"], 1);
    assert_eq!(json(d.join("b/rejections.json"))["accepted"], 2);

    std::fs::write(d.join("bad.csv"), "player_id,x,y,period\nA,25,10,1\nA,oops,12,2\n").unwrap();
    let out = ok(&["ingest", "--input", "bad.csv", "--min-attempts", "0", "--out", "c"], d);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    assert_eq!(json(d.join("c/rejections.json"))["rejected"]["parse_error"], 1);
}

#[test]
fn config_schema_is_enforced() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    one_unit_dataset(d);
    std::fs::write(d.join("typo.toml"), "n_iters = 10\n").unwrap();
    let out = run(&["fit", "--data", "one.json", "--config", "typo.toml", "--seed", "1", "--out", "x"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_iters"));
    std::fs::write(d.join("zero.toml"), "thin = 0\n").unwrap();
    assert_eq!(run(&["fit", "--data", "one.json", "--config", "zero.toml", "--seed", "1", "--out", "x"], d).status.code(), Some(1));
    assert_eq!(run(&["fit", "--data", "nothere.json", "--seed", "1", "--out", "x"], d).status.code(), Some(2));
}

#[test]
fn baselines_write_labels() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["simulate", "--design", "1", "--seed", "3", "--out", "sim"], d);
    ok(&["baseline", "--data", "sim/rep_000/data.json", "--method", "kmeans", "--k", "2", "--out", "km"], d);
    let text = std::fs::read_to_string(d.join("km/labels.csv")).unwrap();
    assert_eq!(text.lines().count(), 151);
    assert!(text.starts_with("unit_id,angle,distance,quarter\n"));
    ok(&["baseline", "--data", "sim/rep_000/data.json", "--method", "dbscan", "--eps", "25", "--out", "db"], d);
    assert_eq!(run(&["baseline", "--data", "sim/rep_000/data.json", "--method", "dbscan", "--out", "x"], d).status.code(), Some(1));
    assert_eq!(run(&["baseline", "--data", "sim/rep_000/data.json", "--method", "kmeans", "--k", "2,2", "--out", "x"], d).status.code(), Some(1));
}

#[test]
fn replicates_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("rep.toml"), "[sampler]\nn_iter = 100\nburn_in = 10\n[baseline]\ndbscan_eps = [25.0, 50.0]\n").unwrap();
    ok(&["replicates", "--design", "1", "--n-rep", "2", "--config", "rep.toml", "--seed", "1", "--out", "r"], d);
    let csv = std::fs::read_to_string(d.join("r/summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 * 3);
    assert_eq!(std::fs::read_to_string(d.join("r/replicates.jsonl")).unwrap().lines().count(), 2);
}
