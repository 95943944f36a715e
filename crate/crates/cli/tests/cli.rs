use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = r#"
[experiment]
n_splits = 4
alphas = [0.1, 0.2]
asymmetric_alphas = [[0.05, 0.05]]
weightings = ["none", "class_oracle"]

[experiment.benchmark]
n_samples = 200
channels = 4

[experiment.benchmark.train]
epochs = 20
lr = 0.1
loss_threshold = 0.69

[experiment.benchmark.task]
height = 16
width = 16

[experiment.benchmark.task.easy]
semi_axis = [2.5, 5.0]
circular = true
contrast = 0.6
noise = 0.08

[experiment.benchmark.task.hard]
semi_axis = [2.0, 6.0]
circular = false
contrast = 0.3
noise = 0.16

[sweep]
samples = 2
nestedness_samples = 4
nestedness_grid = 64
"#;

fn setup() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, TINY).unwrap();
    (dir, cfg)
}

fn compass(cfg: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_compass"))
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("COMPASS_OUT_DIR")
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn manifest(out: &Path, command: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join(format!("manifest_{command}.json"))).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.deserialize().map(|x| x.unwrap()).collect()
}

fn error_line(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let last = text.lines().last().expect("stderr has an error line");
    serde_json::from_str(last).unwrap()
}

#[test]
fn scp_calibration_records_margin() {
    let (dir, cfg) = setup();
    let out = dir.path().join("out");
    ok(compass(&cfg, &out, &["generate"]));
    ok(compass(
        &cfg,
        &out,
        &["--set", "experiment.methods=[\"scp\"]", "calibrate"],
    ));
    let m = manifest(&out, "calibrate");
    let margins = m["summary"]["scp_margins"].as_array().unwrap();
    assert_eq!(margins.len(), 4);
    assert!(margins.iter().all(|x| x["margin"].as_f64().unwrap() > 0.0));
    let files: Vec<&str> = m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| o["file"].as_str().unwrap())
        .collect();
    assert!(files.contains(&"calibration.csv") && files.contains(&"scores.csv"));
    let rows = csv_rows(&out.join("calibration.csv"));
    assert!(rows.iter().all(|r| r["method"] == "scp"));
    assert_eq!(
        m["summary"]["n_cal"].as_u64().unwrap() as usize,
        csv_rows(&out.join("scores.csv")).len()
    );
}

fn strip_timestamp(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("timestamp");
    v
}

#[test]
fn reruns_give_identical_manifests() {
    let (dir, cfg) = setup();
    let run = |name: &str| {
        let out = dir.path().join(name);
        for c in ["generate", "train", "calibrate", "evaluate", "analyze"] {
            ok(compass(&cfg, &out, &[c]));
        }
        out
    };
    let (a, b) = (run("a"), run("b"));
    for c in ["generate", "train", "calibrate", "evaluate", "analyze"] {
        assert_eq!(
            strip_timestamp(manifest(&a, c)),
            strip_timestamp(manifest(&b, c)),
            "{c}"
        );
    }
    assert_eq!(
        fs::read(a.join("records.csv")).unwrap(),
        fs::read(b.join("records.csv")).unwrap()
    );
}

#[test]
fn evaluate_coverage_matches_persisted_intervals() {
    let (dir, cfg) = setup();
    let out = dir.path().join("out");
    ok(compass(&cfg, &out, &["calibrate"]));
    ok(compass(&cfg, &out, &["evaluate"]));
    let intervals = csv_rows(&out.join("intervals.csv"));
    let coverage = csv_rows(&out.join("coverage.csv"));
    assert_eq!(coverage.len(), csv_rows(&out.join("calibration.csv")).len());
    let key =
        |r: &BTreeMap<String, String>| ["method", "mode", "weighting", "alpha_lo", "alpha_hi"].map(|k| r[k].clone());
    for c in &coverage {
        let group: Vec<_> = intervals.iter().filter(|r| key(r) == key(c)).collect();
        let f = |r: &BTreeMap<String, String>, k: &str| r[k].parse::<f64>().unwrap();
        let hits = group
            .iter()
            .filter(|r| f(r, "lo") <= f(r, "y") && f(r, "y") <= f(r, "hi"))
            .count();
        assert_eq!(group.len(), c["n_test"].parse::<usize>().unwrap());
        assert_eq!(hits as f64 / group.len() as f64, f(c, "coverage"));
        let width = group.iter().map(|r| f(r, "hi") - f(r, "lo")).sum::<f64>() / group.len() as f64;
        assert!((width - f(c, "mean_width")).abs() <= 1e-9 * width.max(1.0));
    }
}

#[test]
fn imported_logits_reproduce_in_process_results() {
    let (dir, cfg) = setup();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(compass(&cfg, &a, &["calibrate"]));
    ok(compass(&cfg, &a, &["evaluate"]));
    let (cl, cm) = (a.join("cal_logits.ctx"), a.join("cal_metrics.ctx"));
    let (tl, tm) = (a.join("test_logits.ctx"), a.join("test_metrics.ctx"));
    let s = |p: &Path| p.to_str().unwrap().to_string();
    ok(compass(
        &cfg,
        &b,
        &["calibrate", "--logits", &s(&cl), "--metrics", &s(&cm)],
    ));
    ok(compass(
        &cfg,
        &b,
        &["evaluate", "--logits", &s(&tl), "--metrics", &s(&tm)],
    ));

    let ext_cal = csv_rows(&b.join("calibration.csv"));
    assert!(ext_cal.iter().all(|r| r["method"] != "compass_j"));
    let own_cal: Vec<_> = csv_rows(&a.join("calibration.csv"))
        .into_iter()
        .filter(|r| r["method"] != "compass_j" && r["weighting"] == "none")
        .collect();
    let radius = |rs: &[BTreeMap<String, String>]| -> Vec<(String, String, String, String)> {
        rs.iter()
            .map(|r| {
                (
                    r["method"].clone(),
                    r["alpha_lo"].clone(),
                    r["beta_lo"].clone(),
                    r["beta_hi"].clone(),
                )
            })
            .collect()
    };
    assert_eq!(radius(&ext_cal), radius(&own_cal));

    let bounds = |p: &Path| -> Vec<(String, String, String, String)> {
        csv_rows(p)
            .into_iter()
            .filter(|r| r["method"] != "compass_j" && r["weighting"] == "none")
            .map(|r| {
                (
                    r["method"].clone(),
                    r["alpha_lo"].clone(),
                    r["lo"].clone(),
                    r["hi"].clone(),
                )
            })
            .collect()
    };
    assert_eq!(bounds(&a.join("intervals.csv")), bounds(&b.join("intervals.csv")));
}

#[test]
fn sweep_writes_trajectories_and_nestedness() {
    let (dir, cfg) = setup();
    let out = dir.path().join("out");
    ok(compass(&cfg, &out, &["sweep"]));
    let t = csv_rows(&out.join("trajectories.csv"));
    let zero: Vec<_> = t.iter().filter(|r| r["beta"].parse::<f64>().unwrap() == 0.0).collect();
    assert!(!zero.is_empty());
    assert!(zero.iter().all(|r| r["delta_pct"].parse::<f64>().unwrap() == 0.0));
    assert_eq!(csv_rows(&out.join("nestedness.csv")).len(), 8);
}

#[test]
fn invalid_configuration_exits_2() {
    let (dir, cfg) = setup();
    let out = dir.path().join("out");
    for args in [
        vec!["--set", "experiment.n_split=3", "generate"],
        vec!["--alpha", "1.5", "generate"],
        vec!["--set", "experiment.methods=[\"nope\"]", "generate"],
        vec!["frobnicate"],
    ] {
        let o = compass(&cfg, &out, &args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert_eq!(error_line(&o)["error"], "config");
    }
    fs::write(&cfg, "[experiment]\nsplits = 3\n").unwrap();
    assert_eq!(compass(&cfg, &out, &["generate"]).status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_1() {
    let (dir, cfg) = setup();
    let out = dir.path().join("out");
    let o = compass(&cfg, &out, &["evaluate"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_line(&o)["error"], "runtime");

    let bad = dir.path().join("bad.ctx");
    fs::write(&bad, b"CTX2garbage").unwrap();
    let o = compass(
        &cfg,
        &out,
        &[
            "calibrate",
            "--logits",
            bad.to_str().unwrap(),
            "--metrics",
            bad.to_str().unwrap(),
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    let line = error_line(&o);
    assert_eq!(line["error"], "compute");
    assert!(line["message"].as_str().unwrap().contains("magic"));
}

#[test]
fn output_dir_from_environment() {
    let (dir, cfg) = setup();
    let env_out = dir.path().join("from_env");
    let o = Command::new(env!("CARGO_BIN_EXE_compass"))
        .args(["--config", cfg.to_str().unwrap(), "generate"])
        .env("COMPASS_OUT_DIR", &env_out)
        .output()
        .unwrap();
    ok(o);
    assert!(env_out.join("manifest_generate.json").is_file());
}
