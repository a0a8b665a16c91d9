use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const TINY: [&str; 12] = [
    "--set",
    "dataset.n_train=200",
    "--set",
    "dataset.n_test=40",
    "--set",
    "dataset.n_conflict=20",
    "--set",
    "train.epochs=2",
    "--set",
    "model.hidden_dim=16",
    "--set",
    "dataset.video_dim=16",
];

fn admitqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_admitqa"))
        .args(args)
        .env_remove("ADMITQA_OUT")
        .output()
        .expect("binary runs")
}

fn tiny(args: &[&str]) -> Output {
    let mut all: Vec<&str> = args.to_vec();
    all.extend(TINY);
    admitqa(&all)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_slice(&fs::read(p).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gen_twice_gives_identical_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(tiny(&["gen", "--out", p(&a)]).status.success());
    assert!(tiny(&["gen", "--out", p(&b)]).status.success());
    let (ma, mb) = (read_json(&a.join("manifest.json")), read_json(&b.join("manifest.json")));
    assert_eq!(ma["content_hash"], mb["content_hash"]);
    assert_eq!(fs::read(a.join("train.jsonl")).unwrap(), fs::read(b.join("train.jsonl")).unwrap());
    assert!(a.join("config.toml").exists());
}

#[test]
fn seed_flag_changes_the_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(tiny(&["gen", "--out", p(&a), "--seed", "1"]).status.success());
    assert!(tiny(&["gen", "--out", p(&b), "--seed", "2"]).status.success());
    let (ma, mb) = (read_json(&a.join("manifest.json")), read_json(&b.join("manifest.json")));
    assert_ne!(ma["content_hash"], mb["content_hash"]);
    assert_eq!(ma["seed"], 1);
}

#[test]
fn gradcheck_default_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = admitqa(&["gradcheck", "--out", p(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS"));
    let v = read_json(&dir.path().join("gradcheck.json"));
    assert_eq!(v["result"]["report"]["passed"], true);
}

#[test]
fn gradcheck_impossible_tolerance_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = admitqa(&["gradcheck", "--out", p(dir.path()), "--tolerance", "0", "--samples", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = admitqa(&["train", "--config", "missing.cfg", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("config not found"));
}

#[test]
fn malformed_config_and_overrides_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[dataset\nn_train = ").unwrap();
    assert_eq!(admitqa(&["gen", "--config", p(&cfg), "--out", p(dir.path())]).status.code(), Some(1));
    let o = admitqa(&["gen", "--set", "dataset.no_such_key=1", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    let o = admitqa(&["gen", "--set", "schedule.p_r=2.0", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let o = admitqa(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    assert!(admitqa(&["--help"]).status.success());
}

#[test]
fn missing_checkpoint_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = tiny(&["eval", "--checkpoint", "nope.json", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("checkpoint not found"));
}

#[test]
fn config_file_round_trips_through_gen() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    assert!(tiny(&["gen", "--out", p(&out)]).status.success());
    let again = dir.path().join("e");
    let o = admitqa(&["gen", "--config", p(&out.join("config.toml")), "--out", p(&again)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        read_json(&out.join("manifest.json"))["content_hash"],
        read_json(&again.join("manifest.json"))["content_hash"]
    );
}

#[test]
fn train_eval_sweep_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    assert!(tiny(&["gen", "--out", p(&data)]).status.success());

    let o = tiny(&["train", "--data", p(&data), "--out", p(&run), "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,p_e,realized_rate,mean_loss"));
    assert_eq!(metrics.lines().count(), 3);
    let r = read_json(&run.join("run.json"));
    assert_eq!(r["kind"], "train");
    assert_eq!(r["seed"], 3);
    assert_eq!(r["config"]["train"]["seed"], 3);

    let ck = run.join("checkpoint.json");
    let o = tiny(&["eval", "--checkpoint", p(&ck), "--data", p(&data), "--out", p(&run), "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let e = read_json(&run.join("eval.json"));
    assert_eq!(e["seed"], 3);
    assert!(e["config"].is_object());
    let clean = e["result"]["report"]["clean_accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&clean));

    let o = tiny(&["sweep", "--axis", "schedule", "--grid", "fixed:0.5,quadratic", "--seeds", "0,1", "--data", p(&data), "--out", p(&run)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_dir(&run)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|x| x == "csv") && p.file_name().unwrap().to_str().unwrap().starts_with("sweep_schedule_"))
        .expect("sweep csv");
    assert_eq!(fs::read_to_string(csv).unwrap().lines().count(), 1 + 2 * 2);

    let o = tiny(&["report", "--out", p(&run)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("eval.json") && text.contains("run.json") && text.contains("fixed:0.5"));
    assert!(run.join("report.txt").exists());
    assert_eq!(read_json(&run.join("report.json"))["kind"], "report");
}

#[test]
fn unknown_sweep_axis_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = tiny(&["sweep", "--axis", "colour", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn report_on_empty_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(admitqa(&["report", "--out", p(dir.path())]).status.code(), Some(2));
}

#[test]
fn out_defaults_to_environment_variable() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_admitqa"))
        .args(["gen"])
        .args(TINY)
        .env("ADMITQA_OUT", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("manifest.json").exists());
}
