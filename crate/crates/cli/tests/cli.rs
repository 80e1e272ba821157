//! Drives the `exostab` binary end to end.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn exostab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exostab"))
        .args(args)
        .env_remove("EXOSTAB_SEED")
        .env_remove("EXOSTAB_DATA_DIR")
        .env_remove("EXOSTAB_OUT_DIR")
        .env_remove("EXOSTAB_SEGMENT_TABLE")
        .output()
        .expect("binary runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Key paths of a JSON value; array elements collapse to `[]`.
fn schema(v: &Value, prefix: &str, out: &mut BTreeSet<String>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let p = format!("{prefix}.{k}");
                out.insert(p.clone());
                schema(child, &p, out);
            }
        }
        Value::Array(items) => {
            for item in items {
                schema(item, &format!("{prefix}[]"), out);
            }
        }
        _ => {}
    }
}

#[test]
fn planted_report_succeeds_and_matches_golden_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = exostab(&["report", "--source", "planted", "--seed", "11", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["seed"], 11);
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
    for entry in report["artifacts"].as_array().unwrap() {
        let name = entry["file"].as_str().unwrap();
        assert!(out.join(name).exists(), "{name}");
        if name.ends_with(".json") {
            let v = read_json(&out.join(name));
            assert_eq!(v["config_hash"], report["config_hash"], "{name}");
            assert_eq!(v["seed"], 11, "{name}");
        }
    }
    let mut keys = BTreeSet::new();
    schema(&report, "$", &mut keys);
    let golden: BTreeSet<String> =
        std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/report_schema.txt"))
            .unwrap()
            .lines()
            .map(str::to_string)
            .collect();
    assert_eq!(keys, golden, "report.json key set changed");
}

#[test]
fn rerun_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |dir: &str, workers: &str| {
        let out = tmp.path().join(dir);
        let o = exostab(&["report", "--source", "planted", "--workers", workers, "--out", out.to_str().unwrap()]);
        assert!(o.status.success());
        std::fs::read(out.join("report.json")).unwrap()
    };
    assert_eq!(run("a", "1"), run("b", "2"));
}

#[test]
fn missing_data_dir_is_data_error() {
    let o = exostab(&["wbam", "--data", "/nonexistent/exostab-data"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stage trial-io"));
}

#[test]
fn bad_config_is_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    std::fs::write(&path, "seed = \"not a number\"\n").unwrap();
    assert_eq!(exostab(&["report", "--config", path.to_str().unwrap()]).status.code(), Some(2));
    std::fs::write(&path, "[bootstrap]\nn_resamples = 3\n").unwrap();
    assert_eq!(exostab(&["report", "--config", path.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(exostab(&["report", "--outcome", "speed"]).status.code(), Some(2));
}

#[test]
fn env_seed_is_overridden_by_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = |extra: &[&str]| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_exostab"));
        cmd.env("EXOSTAB_SEED", "42").arg("config").args(extra).current_dir(tmp.path());
        String::from_utf8(cmd.output().unwrap().stdout).unwrap()
    };
    assert!(cfg(&[]).contains("seed = 42"));
    assert!(cfg(&["--seed", "5"]).contains("seed = 5"));
}

#[test]
fn stage_subcommands_write_their_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    for (cmd, file) in [
        ("wbam", "trials.json"),
        ("sweep", "dataset_opus.json"),
        ("surface", "figure_opus.svg"),
        ("stats", "stats_opus.json"),
    ] {
        let o = exostab(&[cmd, "--source", "planted", "--outcome", "opus", "--out", out]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(tmp.path().join(file).exists(), "{cmd} -> {file}");
    }
}

#[test]
fn synth_then_wbam_on_written_sessions() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("small.toml");
    std::fs::write(
        &cfg,
        "[grid]\nmagnitudes = [0.1]\ndurations = [2.0]\n[synth.planted]\nn_subjects = 1\nn_repetitions = 1\n",
    )
    .unwrap();
    let data = tmp.path().join("data");
    let c = cfg.to_str().unwrap();
    let o = exostab(&["synth", "--config", c, "--out", data.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = tmp.path().join("out");
    let o = exostab(&["wbam", "--config", c, "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trials = read_json(&out.join("trials.json"));
    assert_eq!(trials["trials"].as_array().unwrap().len(), 4);
}
