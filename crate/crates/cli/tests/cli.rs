use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_contraswitch"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn measure_prints_all_kinds() {
    let o = run(&["measure", "--example", "example1", "--point", "0,4"]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.contains("mu_1 = 2\n"), "{}", out);
    assert!(out.contains("mu_2 = 2\n"));
    assert!(out.contains("mu_inf = 2\n"));
    let o = run(&["measure", "--example", "example1", "--point", "0,0"]);
    assert!(stdout(&o).contains("mu_1 = -4\n"));
}

#[test]
fn measure_rejects_malformed_expression_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.json",
        "{\n  \"variables\": [\"x1\"],\n  \"f\": [\"-4*x1 +\"],\n  \"c_bar\": 2\n}\n",
    );
    let o = run(&["measure", "--config", &cfg, "--point", "1"]);
    assert_eq!(code(&o), 64);
    assert!(stderr(&o).contains("bad.json:3"), "{}", stderr(&o));
}

#[test]
fn certify_example1_and_failing_rate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["certify", "--example", "example1", "--out", out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cert = json(&dir.path().join("certificate.json"));
    assert_eq!(cert["verdict"], "pass");
    assert_eq!(cert["measure"], "1");
    for key in ["c_bar", "c1", "c2", "worst_margin_splus", "worst_margin_sminus", "worst_sigma_mu", "grid"] {
        assert!(cert.get(key).is_some(), "missing {}", key);
    }

    let o = run(&["certify", "--example", "example1", "--cbar", "5", "--out", out]);
    assert_eq!(code(&o), 1);
    assert_eq!(json(&dir.path().join("certificate.json"))["verdict"], "fail");
}

#[test]
fn certify_without_region_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "p.json",
        r#"{"variables": ["x1", "x2"], "f": ["-4*x1", "x2^2 - 6*x2"], "g": [["1", "2"]],
            "controller": {"u_plus": ["-10*x2"]}, "c_bar": 2}"#,
    );
    let o = run(&["certify", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 64);
    assert!(stderr(&o).contains("region"));
}

#[test]
fn synthesize_examples() {
    let dir = tempfile::tempdir().unwrap();
    for (example, k) in [("example1", -10.0), ("example2", -1.0)] {
        let out = dir.path().join(example);
        let o = run(&["synthesize", "--example", example, "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let design = json(&out.join("design.json"));
        assert_eq!(design["gains"][0][0].as_f64(), Some(k));
        assert_eq!(design["certificate"]["verdict"], "pass");
        assert_eq!(design["u_minus"][0], "0.0");
    }
}

const PLANT: &str = r#""variables": ["x1", "x2"], "f": ["-4*x1", "x2^2 - 6*x2"], "g": [["1", "2"]], "c_bar": 2"#;

#[test]
fn synthesize_failure_and_already_contracting() {
    let dir = tempfile::tempdir().unwrap();
    let fail_cfg = write_config(
        dir.path(),
        "fail.json",
        &format!(
            r#"{{{}, "region": {{"bounds": [[-5, 5], [-5, 7]], "resolution": [25]}},
                "synthesis": {{"template": {{"channels": [["x2"]]}}, "gain_bounds": [-3, 0], "gain_step": 1}}}}"#,
            PLANT
        ),
    );
    let out = dir.path().join("fail");
    let o = run(&["synthesize", "--config", &fail_cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let report = json(&out.join("search_failure.json"));
    assert_eq!(report["candidates_evaluated"], 4);
    assert!(report["best_violation"].as_f64().unwrap() > 0.0);

    let ok_cfg = write_config(
        dir.path(),
        "ok.json",
        &format!(
            r#"{{{}, "region": {{"bounds": [[-5, 5], [-5, 1]], "resolution": [11]}},
                "synthesis": {{"template": {{"channels": [["x2"]]}}, "gain_bounds": [-3, 0], "gain_step": 1}}}}"#,
            PLANT
        ),
    );
    let out = dir.path().join("ok");
    let o = run(&["synthesize", "--config", &ok_cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("already contracting"));
    assert_eq!(json(&out.join("design.json"))["gains"][0][0].as_f64(), Some(0.0));
}

#[test]
fn simulate_pair_writes_trajectories_and_decay() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["simulate", "--example", "example1", "--step", "0.01", "--out", out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["pair1_x.csv", "pair1_y.csv", "pair1_decay.csv", "decay.json"] {
        assert!(dir.path().join(f).exists(), "{} missing", f);
    }
    let decay = fs::read_to_string(dir.path().join("pair1_decay.csv")).unwrap();
    assert!(decay.starts_with("t,distance,bound,ratio\n0,2,2,1\n"));
    assert_eq!(decay.lines().count(), 402);
}

#[test]
fn simulate_crossing_event() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "p.json",
        r#"{"variables": ["x"], "f": ["-1"], "g": [["0"]], "c_bar": 1,
            "controller": {"u_plus": ["0"], "h": "x - 0.5"},
            "simulation": {"step": 0.01, "t_span": [0, 1], "initial_conditions": [[1]]}}"#,
    );
    let o = run(&["simulate", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let events = fs::read_to_string(dir.path().join("run1_events.csv")).unwrap();
    let rows: Vec<&str> = events.lines().collect();
    assert_eq!(rows.len(), 2, "{}", events);
    assert_eq!(rows[0], "t,x,kind");
    assert!(rows[1].ends_with(",crossing"));
}

#[test]
fn simulate_errors() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write_config(
        dir.path(),
        "empty.json",
        &format!(
            r#"{{{}, "controller": {{"u_plus": ["0"]}},
                "simulation": {{"step": 0.01, "t_span": [1, 1], "initial_conditions": [[1, 4]]}}}}"#,
            PLANT
        ),
    );
    let o = run(&["simulate", "--config", &empty, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 64);

    let escape = write_config(
        dir.path(),
        "escape.json",
        &format!(
            r#"{{{}, "controller": {{"u_plus": ["0"]}},
                "simulation": {{"step": 0.001, "t_span": [0, 1], "initial_conditions": [[1, 9]]}}}}"#,
            PLANT
        ),
    );
    let o = run(&["simulate", "--config", &escape, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("finite escape"));
    assert!(dir.path().join("run1_partial.csv").exists());
}

#[test]
fn reproduce_is_byte_stable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let o = run(&["reproduce", "example1", "--out", dir.path().to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let mut names: Vec<_> = fs::read_dir(a.path().join("example1"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.len() >= 10);
    for n in names {
        let x = fs::read(a.path().join("example1").join(&n)).unwrap();
        let y = fs::read(b.path().join("example1").join(&n)).unwrap();
        assert_eq!(x, y, "{:?} differs", n);
    }
    let effort = json(&a.path().join("example1/effort.json"));
    assert_eq!(effort["switched_is_lower"], true);
}

#[test]
fn reproduce_example2_reports_open_loop_escape() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["reproduce", "example2", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let open = json(&dir.path().join("example2/open_loop.json"));
    for entry in open.as_array().unwrap() {
        assert_eq!(entry["outcome"], "finite-escape");
    }
    let summary = json(&dir.path().join("example2/summary.json"));
    assert_eq!(summary["certificate"], true);
}
