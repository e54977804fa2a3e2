use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_previewflow"));
    c.env_remove("PREVIEWFLOW_DETERMINISTIC");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn write_config(dir: &Path, name: &str, json: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, json).unwrap();
    p.display().to_string()
}

const BLUR: &str = r#"{"schema_version": 1, "model": {"kind": "blur", "gain": 0.8, "padding": "reflect"}, "shape": [8, 8, 3]}"#;

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect()
}

fn out(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).display().to_string()
}

#[test]
fn train_one_step_is_deterministic() {
    let t = TempDir::new().unwrap();
    let cfg = write_config(t.path(), "t.json", r#"{"schema_version": 1, "train": {"config": {"steps": 1}}}"#);
    for name in ["a", "b"] {
        let o = run(&["train", "--config", &cfg, "--out", &out(&t, name)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(csv_rows(&t.path().join("a/loss.csv")).len(), 1);
    let (a, b) = (fs::read(t.path().join("a/model.ckpt")).unwrap(), fs::read(t.path().join("b/model.ckpt")).unwrap());
    assert_eq!(a, b);
}

#[test]
fn invalid_architecture_key_is_a_schema_error() {
    let t = TempDir::new().unwrap();
    let cfg = write_config(
        t.path(),
        "t.json",
        r#"{"schema_version": 1, "train": {"architecture": {"channels": 3, "cond_arity": 4, "hidden": [4], "kernel": 3,
            "coord_channels": true, "modulated_input": true, "skip": true, "depth": 9}}}"#,
    );
    let o = run(&["train", "--config", &cfg, "--out", &out(&t, "x")]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("depth"));
}

#[test]
fn divergence_keeps_partial_trace() {
    let t = TempDir::new().unwrap();
    let cfg = write_config(t.path(), "t.json", r#"{"schema_version": 1, "train": {"config": {"steps": 50, "lr": 1e30}}}"#);
    let o = run(&["train", "--config", &cfg, "--out", &out(&t, "x")]);
    assert_eq!(code(&o), 2);
    let rows = csv_rows(&t.path().join("x/loss.csv"));
    assert!(!rows.is_empty() && rows.len() < 50);
    assert_eq!(rows.last().unwrap()[1], "NaN");
    assert!(!t.path().join("x/model.ckpt").exists());
}

#[test]
fn preview_writes_reports_and_aggregate() {
    let t = TempDir::new().unwrap();
    let cfg = write_config(t.path(), "p.json", BLUR);
    let o = run(&["preview", "--config", &cfg, "--seeds", "1,2,3", "--out", &out(&t, "run"), "--export-images"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for s in 1..=3 {
        let d = t.path().join(format!("run/seeds/{s}"));
        assert!(d.join("report.json").exists());
        for name in ["hr", "ours", "naive-down", "direct-lr", "reduced-nfe"] {
            assert!(d.join(format!("{name}.f32")).exists() && d.join(format!("{name}.png")).exists(), "{name}");
        }
    }
    let rows = csv_rows(&t.path().join("run/summary.csv"));
    assert_eq!(rows.len(), 12);
    for s in ["1", "2", "3"] {
        assert_eq!(rows.iter().filter(|r| r[0] == s).count(), 4);
    }
    let ours = rows.iter().find(|r| r[1] == "ours").unwrap();
    assert_eq!(ours[4], "18.5");
}

#[test]
fn preview_rerun_and_jobs_give_identical_csv() {
    let t = TempDir::new().unwrap();
    let cfg = write_config(t.path(), "p.json", BLUR);
    for (name, jobs) in [("a", "1"), ("b", "1"), ("c", "3")] {
        assert_eq!(code(&run(&["preview", "--config", &cfg, "--seeds", "0..5", "--jobs", jobs, "--out", &out(&t, name)])), 0);
    }
    let read = |n: &str| fs::read(t.path().join(n).join("summary.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_eq!(read("a"), read("c"));
}

#[test]
fn config_snapshot_echoes_defaults_and_reproduces() {
    let t = TempDir::new().unwrap();
    let cfg = write_config(t.path(), "p.json", BLUR);
    assert_eq!(code(&run(&["preview", "--config", &cfg, "--seeds", "4", "--out", &out(&t, "a")])), 0);
    let snap: serde_json::Value = serde_json::from_slice(&fs::read(t.path().join("a/config.json")).unwrap()).unwrap();
    assert_eq!(snap["preview"]["steps"], 30);
    assert_eq!(snap["preview"]["downsample_step"], 10);
    assert_eq!(snap["preview"]["m"], 5);
    assert_eq!(snap["preview"]["alpha"], 0.04);
    assert_eq!(snap["preview"]["cost_model"], "linear");
    assert_eq!(snap["command"], "preview");
    assert_eq!(snap["baselines"].as_array().unwrap().len(), 3);
    assert_eq!(snap["seeds"], serde_json::json!([4]));
}

#[test]
fn snapshot_rerun_is_byte_identical() {
    let t = TempDir::new().unwrap();
    let cfg = write_config(t.path(), "p.json", BLUR);
    assert_eq!(code(&run(&["preview", "--config", &cfg, "--seeds", "4,5", "--out", &out(&t, "a")])), 0);
    let first = fs::read(t.path().join("a/summary.csv")).unwrap();
    let snap = t.path().join("snap.json");
    fs::copy(t.path().join("a/config.json"), &snap).unwrap();
    fs::remove_dir_all(t.path().join("a")).unwrap();
    assert_eq!(code(&run(&["preview", "--config", snap.to_str().unwrap()])), 0);
    assert_eq!(fs::read(t.path().join("a/summary.csv")).unwrap(), first);
}

#[test]
fn compare_against_itself_hits_the_cap() {
    let t = TempDir::new().unwrap();
    let cfg = write_config(t.path(), "p.json", BLUR);
    let run_dir = out(&t, "run");
    assert_eq!(code(&run(&["preview", "--config", &cfg, "--seeds", "1,2", "--out", &run_dir])), 0);
    let o = run(&["compare", &run_dir, "--against", &run_dir, "--metrics", "psnr", "--out", &out(&t, "cmp")]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&t.path().join("cmp/compare.csv"));
    assert_eq!(rows.len(), 4);
    for r in &rows {
        assert_eq!(r[3], "99", "{r:?}");
    }
    assert_eq!(String::from_utf8(o.stdout).unwrap(), fs::read_to_string(t.path().join("cmp/compare.csv")).unwrap());
}

#[test]
fn compare_reports_default_speedup() {
    let t = TempDir::new().unwrap();
    let cfg = write_config(t.path(), "p.json", BLUR);
    let run_dir = out(&t, "run");
    assert_eq!(code(&run(&["preview", "--config", &cfg, "--seeds", "1", "--out", &run_dir])), 0);
    let o = run(&["compare", &run_dir, "--metrics", "cost,speedup"]);
    let text = String::from_utf8(o.stdout).unwrap();
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers().unwrap().clone();
    assert_eq!(&headers[3], "cost_units_mean");
    let ours = r.records().map(|x| x.unwrap()).find(|x| &x[1] == "ours").unwrap();
    assert_eq!(ours[3].parse::<f64>().unwrap(), 18.5);
    let speedup: f64 = ours[5].parse().unwrap();
    assert!((speedup - 1.6216).abs() < 1e-3);
}

#[test]
fn compare_names_the_unpaired_seed() {
    let t = TempDir::new().unwrap();
    let cfg = write_config(t.path(), "p.json", BLUR);
    let run_dir = out(&t, "run");
    assert_eq!(code(&run(&["preview", "--config", &cfg, "--seeds", "1,2", "--out", &run_dir])), 0);
    fs::remove_file(t.path().join("run/seeds/2/ours.f32")).unwrap();
    let o = run(&["compare", &run_dir]);
    assert_eq!(code(&o), 3);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("unpaired") && err.contains("seed 2"), "{err}");
}

#[test]
fn ablate_axes_have_table_shapes() {
    let t = TempDir::new().unwrap();
    let cfg = write_config(t.path(), "p.json", BLUR);
    for (axis, rows) in [("selection", 4), ("cg", 2), ("m-alpha", 30), ("k", 3)] {
        let dir = out(&t, axis);
        let o = run(&["ablate", "--config", &cfg, "--seeds", "0,1", "--axis", axis, "--out", &dir]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let r = csv_rows(&t.path().join(axis).join("ablate.csv"));
        assert_eq!(r.len(), rows, "{axis}");
    }
    let k = csv_rows(&t.path().join("k/ablate.csv"));
    let mut r = csv::Reader::from_path(t.path().join("k/ablate.csv")).unwrap();
    let col = r.headers().unwrap().iter().position(|h| h == "cost_units").unwrap();
    let costs: Vec<f64> = k.iter().map(|row| row[col].parse().unwrap()).collect();
    assert!(costs.windows(2).all(|w| w[1] > w[0]), "{costs:?}");
    let selection = csv_rows(&t.path().join("selection/ablate.csv"));
    let names: Vec<&str> = selection.iter().map(|r| r[1].as_str()).collect();
    assert_eq!(names, ["nearest", "random", "argmax", "argmin"]);
}

#[test]
fn stats_outputs_and_seed_floor() {
    let t = TempDir::new().unwrap();
    let cfg = write_config(t.path(), "p.json", BLUR);
    let o = run(&["stats", "--config", &cfg, "--seeds", "0..30", "--out", &out(&t, "s")]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(csv_rows(&t.path().join("s/stats_cg.csv")).len(), 30);
    assert_eq!(csv_rows(&t.path().join("s/stats_cosine.csv")).len(), 6);
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(t.path().join("s/stats_cg.json")).unwrap()).unwrap();
    for key in ["metric", "n", "mean", "std", "W", "p"] {
        assert!(summary["tests"][0].get(key).is_some(), "{key}");
    }
    let o = run(&["stats", "--config", &cfg, "--seeds", "0..5", "--test", "cg", "--out", &out(&t, "few")]);
    assert_eq!(code(&o), 1);
}

#[test]
fn usage_and_io_exit_codes() {
    let t = TempDir::new().unwrap();
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["preview", "--bogus"])), 1);
    assert_eq!(code(&run(&["preview", "--seeds", "x..y"])), 1);
    let v2 = write_config(t.path(), "v2.json", r#"{"schema_version": 2}"#);
    assert_eq!(code(&run(&["preview", "--config", &v2])), 1);
    let unknown = write_config(t.path(), "u.json", r#"{"schema_version": 1, "preview": {"alpah": 0.1}}"#);
    assert_eq!(code(&run(&["preview", "--config", &unknown])), 1);
    let wrong = write_config(t.path(), "w.json", r#"{"schema_version": 1, "command": "train"}"#);
    assert_eq!(code(&run(&["preview", "--config", &wrong])), 1);
    let bad_window = write_config(
        t.path(),
        "b.json",
        r#"{"schema_version": 1, "model": {"kind": "blur", "gain": 1.0, "padding": "reflect"}, "preview": {"m": 25}}"#,
    );
    assert_eq!(code(&run(&["preview", "--config", &bad_window, "--out", &out(&t, "b")])), 1);
    assert_eq!(code(&run(&["preview", "--config", &out(&t, "missing.json")])), 3);
    let no_ckpt = write_config(t.path(), "c.json", r#"{"schema_version": 1, "model": {"kind": "checkpoint", "path": "none.ckpt"}}"#);
    assert_eq!(code(&run(&["preview", "--config", &no_ckpt, "--out", &out(&t, "c")])), 3);
}

#[test]
fn quadratic_cost_flag_overrides_config() {
    let t = TempDir::new().unwrap();
    let cfg = write_config(t.path(), "p.json", BLUR);
    assert_eq!(code(&run(&["preview", "--config", &cfg, "--seeds", "0", "--cost-model", "quadratic", "--out", &out(&t, "q")])), 0);
    let rows = csv_rows(&t.path().join("q/summary.csv"));
    let ours = rows.iter().find(|r| r[1] == "ours").unwrap();
    // 11 full + 30 reduced evaluations at (1/4)^2
    assert_eq!(ours[4].parse::<f64>().unwrap(), 11.0 + 30.0 / 16.0);
}

#[test]
fn deterministic_mode_omits_wall_time() {
    let t = TempDir::new().unwrap();
    let cfg = write_config(t.path(), "p.json", BLUR);
    let o = bin()
        .args(["preview", "--config", &cfg, "--seeds", "0", "--jobs", "4", "--out", &out(&t, "d")])
        .env("PREVIEWFLOW_DETERMINISTIC", "1")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let summary = fs::read_to_string(t.path().join("d/summary.json")).unwrap();
    assert!(!summary.contains("wall_ms"));
    let snap: serde_json::Value = serde_json::from_slice(&fs::read(t.path().join("d/config.json")).unwrap()).unwrap();
    assert_eq!(snap["jobs"], 1);
}
