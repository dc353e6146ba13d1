use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_route-lmt");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .env_remove("ROUTE_LMT_SEED")
        .env_remove("ROUTE_LMT_OUT_DIR")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec![
        "--seed", "11", "synth", "--n", "600", "--dim", "4", "--directions", "en-zh,de-en",
        "--out", "data.jsonl", "--freq-out", "freq.tsv",
    ];
    args.extend_from_slice(extra);
    ok(dir, &args);
}

#[test]
fn full_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, &["--severe-fraction", "0.05"]);
    let train = ok(dir, &["--out-dir", "out", "train", "--data", "data.jsonl"]);
    let report: serde_json::Value = serde_json::from_str(&train).unwrap();
    assert!(report["report"]["heldout_spearman"].as_f64().unwrap() > 0.5);
    assert!(dir.join("out/head.json").exists());

    ok(dir, &[
        "--out-dir", "out", "calibrate", "--data", "data.jsonl", "--scorer", "learned", "--head",
        "out/head.json", "--p", "0.2,0.3", "--per-direction",
    ]);
    let profile: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("out/profile.json")).unwrap()).unwrap();
    assert_eq!(profile["version"], 1);
    assert_eq!(profile["entries"].as_array().unwrap().len(), 6);

    ok(dir, &[
        "--out-dir", "out", "route", "--data", "data.jsonl", "--scorer", "learned", "--head", "out/head.json",
        "--mode", "hardcap", "--profile", "out/profile.json", "--window", "50",
    ]);
    let decisions = fs::read_to_string(dir.join("out/decisions.jsonl")).unwrap();
    let routes: Vec<serde_json::Value> = decisions.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(routes.len(), 600);
    for window in routes.chunks(50) {
        assert!(window.iter().filter(|d| d["route"] == "large").count() <= 15);
    }

    let metrics = ok(dir, &[
        "--out-dir", "out", "eval", "--data", "data.jsonl", "--scorer", "learned", "--scorer", "length",
        "--scorer", "rarity", "--scorer", "oracle-gain", "--head", "out/head.json", "--freq", "freq.tsv",
    ]);
    assert!(metrics.starts_with("scorer,scope,p,spearman,hitrate,mean_delta,system_quality,n\n"));
    assert_eq!(metrics.lines().count(), 1 + 4 * 3);
    assert!(metrics.contains("oracle-gain,global,0.3000,1.0000,1.0000,"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["seed"], 0);
    assert_eq!(report["config"]["command"]["eval"]["p"], 0.3);
    assert_eq!(report["config"]["command"]["eval"]["scorer"][3], "oracle-gain");

    let pareto = ok(dir, &["--out-dir", "out", "sweep", "--data", "data.jsonl", "--scorer", "random", "--scorer", "oracle-gain"]);
    assert_eq!(pareto.lines().count(), 1 + 2 * 12);

    let plain = ok(dir, &["--out-dir", "out", "risk", "--data", "data.jsonl", "--scorer", "learned", "--head", "out/head.json"]);
    let guarded = ok(dir, &[
        "--out-dir", "out", "risk", "--data", "data.jsonl", "--scorer", "learned", "--head", "out/head.json",
        "--guard", "oracle",
    ]);
    let severe = |csv: &str| -> usize {
        let line = csv.lines().find(|l| l.contains(",severe_loss,")).unwrap();
        line.split(',').nth(2).unwrap().parse().unwrap()
    };
    assert!(severe(&guarded) <= severe(&plain));
    assert!(guarded.contains("learned-gain+guard-oracle"));
}

#[test]
fn outputs_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, &[]);
    let first = fs::read(dir.join("data.jsonl")).unwrap();
    synth(dir, &[]);
    assert_eq!(first, fs::read(dir.join("data.jsonl")).unwrap());

    let eval = |out: &str| {
        ok(dir, &["--seed", "3", "--out-dir", out, "eval", "--data", "data.jsonl", "--scorer", "random", "--scorer", "entropy"]);
        ok(dir, &["--seed", "3", "--out-dir", out, "sweep", "--data", "data.jsonl", "--scorer", "random"]);
    };
    eval("a");
    eval("b");
    for name in ["metrics.csv", "pareto.csv", "risk.csv"] {
        assert_eq!(fs::read(dir.join("a").join(name)).unwrap(), fs::read(dir.join("b").join(name)).unwrap(), "{name}");
    }
    ok(dir, &["--seed", "4", "--out-dir", "c", "eval", "--data", "data.jsonl", "--scorer", "random"]);
    assert_ne!(
        fs::read(dir.join("a/metrics.csv")).unwrap(),
        fs::read(dir.join("c/metrics.csv")).unwrap()
    );
}

#[test]
fn seed_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = Command::new(BIN)
        .current_dir(dir)
        .env("ROUTE_LMT_SEED", "11")
        .args(["synth", "--n", "600", "--dim", "4", "--directions", "en-zh,de-en", "--out", "env.jsonl"])
        .output()
        .unwrap();
    assert!(out.status.success());
    synth(dir, &[]);
    assert_eq!(fs::read(dir.join("env.jsonl")).unwrap(), fs::read(dir.join("data.jsonl")).unwrap());
}

#[test]
fn fixture_golden_metrics() {
    let fixture = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/metrics40.jsonl");
    let tmp = tempfile::tempdir().unwrap();
    let stdout = ok(tmp.path(), &["eval", "--data", fixture, "--scorer", "oracle-gain", "--p", "0.3"]);
    let expected = "\
scorer,scope,p,spearman,hitrate,mean_delta,system_quality,n
oracle-gain,de-en,0.3000,1.0000,1.0000,9.1667,56.6375,20
oracle-gain,en-zh,0.3000,1.0000,1.0000,9.0000,43.8625,20
oracle-gain,global,0.3000,1.0000,1.0000,9.0833,50.2500,40
";
    assert_eq!(stdout, expected);
    assert_eq!(fs::read_to_string(tmp.path().join("out/metrics.csv")).unwrap(), expected);
}

#[test]
fn user_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, &[]);

    let missing = run(dir, &["eval", "--data", "nope.jsonl", "--scorer", "length"]);
    assert_eq!(code(&missing), 2);

    let learned = run(dir, &["eval", "--data", "data.jsonl", "--scorer", "learned"]);
    assert_eq!(code(&learned), 2);
    assert!(String::from_utf8_lossy(&learned.stderr).contains("--head"));

    fs::write(dir.join("h.json"), "{}").unwrap();
    let stray = run(dir, &["eval", "--data", "data.jsonl", "--scorer", "length", "--head", "h.json"]);
    assert_eq!(code(&stray), 2);

    let rarity = run(dir, &["eval", "--data", "data.jsonl", "--scorer", "rarity"]);
    assert_eq!(code(&rarity), 2);

    assert_eq!(code(&run(dir, &["eval", "--data", "data.jsonl", "--scorer", "bogus"])), 2);
    assert_eq!(code(&run(dir, &["eval", "--data", "data.jsonl", "--scorer", "length", "--p", "1.5"])), 2);

    let mut text = fs::read_to_string(dir.join("data.jsonl")).unwrap();
    text.push_str("{\"id\": \"bad\", \"direction\": \"en-zh\", \"q_small\": 140, \"q_large\": 50}\n");
    fs::write(dir.join("bad.jsonl"), text).unwrap();
    let bad = run(dir, &["eval", "--data", "bad.jsonl", "--scorer", "length"]);
    assert_eq!(code(&bad), 2);
    assert!(String::from_utf8_lossy(&bad.stderr).contains(":601"), "{}", String::from_utf8_lossy(&bad.stderr));

    ok(dir, &["train", "--data", "data.jsonl"]);
    let head = fs::read_to_string(dir.join("out/head.json")).unwrap();
    fs::write(dir.join("v2.json"), head.replacen("\"version\": 1", "\"version\": 2", 1)).unwrap();
    let version = run(dir, &["eval", "--data", "data.jsonl", "--scorer", "learned", "--head", "v2.json"]);
    assert_eq!(code(&version), 2);
    assert!(String::from_utf8_lossy(&version.stderr).contains("version"));

    let no_profile = run(dir, &["route", "--data", "data.jsonl", "--scorer", "length", "--mode", "threshold"]);
    assert_eq!(code(&no_profile), 2);
}

#[test]
fn unwritable_output_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, &[]);
    fs::write(dir.join("blocker"), "").unwrap();
    let out = run(dir, &["--out-dir", "blocker/sub", "eval", "--data", "data.jsonl", "--scorer", "length"]);
    assert_eq!(code(&out), 1);
}
