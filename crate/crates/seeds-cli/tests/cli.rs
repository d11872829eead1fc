use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn seeds(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seeds")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn sample_reports_nfe_and_writes_one_row_per_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.csv");
    let o = seeds(&[
        "sample",
        "--solver",
        "seeds3",
        "--schedule",
        "vp",
        "--steps",
        "31",
        "--paths",
        "1000",
        "--seed",
        "7",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("nfe_per_path 90 "), "{}", stdout(&o));
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "path,x0");
    assert_eq!(lines.len(), 1001);
}

#[test]
fn csv_floats_round_trip() {
    let o = seeds(&["sample", "--paths", "50", "--steps", "8"]);
    assert_eq!(code(&o), 0);
    for line in stdout(&o).lines().skip(1) {
        let field = line.split(',').nth(1).unwrap();
        let v: f64 = field.parse().unwrap();
        assert_eq!(format!("{v:?}"), field);
    }
}

#[test]
fn trajectories_are_one_file_per_path() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("traj");
    let o = seeds(&[
        "sample",
        "--paths",
        "3",
        "--steps",
        "6",
        "--trajectories",
        p(&traj),
        "--out",
        p(&dir.path().join("t.csv")),
    ]);
    assert_eq!(code(&o), 0);
    let mut names: Vec<_> = fs::read_dir(&traj).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names, ["path_000000.csv", "path_000001.csv", "path_000002.csv"]);
    // six nodes plus the final node at zero, plus the header
    assert_eq!(fs::read_to_string(traj.join("path_000001.csv")).unwrap().lines().count(), 8);
}

#[test]
fn gddim_on_edm_is_a_config_error() {
    let o = seeds(&["sample", "--solver", "gddim", "--schedule", "edm"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("variance-preserving"));
}

#[test]
fn bad_input_exits_with_one() {
    assert_eq!(code(&seeds(&["sample", "--bogus"])), 1);
    assert_eq!(code(&seeds(&["sample", "--solver", "seeds9"])), 1);
    assert_eq!(code(&seeds(&["sample", "--workers", "0"])), 1);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"seeed": 3}"#).unwrap();
    assert_eq!(code(&seeds(&["sample", "--config", p(&cfg)])), 1);
    assert_eq!(code(&seeds(&["sample", "--config", p(&dir.path().join("missing.json"))])), 1);
}

#[test]
fn strong_order_on_seeds2_is_rejected() {
    assert_eq!(code(&seeds(&["order", "strong", "--solver", "seeds2"])), 1);
}

#[test]
fn strong_order_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("strong.csv");
    let o = seeds(&["order", "strong", "--solver", "seeds1", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "h,error,se,n_paths");
    assert_eq!(csv.lines().count(), 5);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.with_extension("json")).unwrap()).unwrap();
    assert!(summary["slope"].is_f64());
    assert!(summary["slope_se"].is_f64());
    assert!(summary["r2"].as_f64().unwrap() >= 0.95);
}

#[test]
fn weak_order_of_seeds2() {
    let o = seeds(&["order", "weak", "--solver", "seeds2", "--workers", "2", "--out", "/dev/null"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(summary["slope"].as_f64().unwrap() >= 0.8);
}

#[test]
fn order_threshold_is_an_acceptance_check() {
    let o = seeds(&["order", "strong", "--paths", "200", "--threshold", "5"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn compare_verdicts() {
    let o = seeds(&["compare", "seeds1-dp", "--solver", "gddim", "--threshold", "1e-10"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).ends_with("PASS\n"));

    let o = seeds(&["compare", "seeds1-dp", "--solver", "seeds1-np", "--threshold", "1e-6"]);
    assert_eq!(code(&o), 2);
    assert!(stdout(&o).ends_with("FAIL\n"));

    let o = seeds(&["compare", "seeds3", "--solver", "seeds3"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("max_rel_diff 0.0\n"));
}

#[test]
fn compare_rejects_mismatched_grids() {
    let dir = tempfile::tempdir().unwrap();
    let other = dir.path().join("other.json");
    fs::write(&other, r#"{"grid": {"steps": 20}}"#).unwrap();
    assert_eq!(code(&seeds(&["compare", p(&other)])), 1);
    fs::write(&other, r#"{"solver": {"name": "seeds1", "mode": "data"}}"#).unwrap();
    assert_eq!(code(&seeds(&["compare", p(&other), "--threshold", "1e-6"])), 2);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"seed": 3, "solver": {"name": "seeds2"}, "schedule": {"kind": "vp", "beta_d": 19.1}}"#)
        .unwrap();
    let o = seeds(&["sample", "--config", p(&cfg), "--seed", "9", "--schedule", "vp", "--print-config"]);
    let resolved: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(resolved["seed"], 9);
    assert_eq!(resolved["solver"]["name"], "seeds2");
    assert_eq!(resolved["schedule"]["beta_d"], 19.1);
}

#[test]
fn resolved_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "sample",
        "--solver",
        "seeds1",
        "--schedule",
        "edm",
        "--mode",
        "data",
        "--steps",
        "12",
        "--paths",
        "40",
        "--seed",
        "4",
    ];
    let direct = seeds(&args);
    let resolved = seeds(&[&args[..], &["--print-config"]].concat());
    let cfg = dir.path().join("resolved.json");
    fs::write(&cfg, &resolved.stdout).unwrap();
    let replay = seeds(&["sample", "--config", p(&cfg)]);
    assert_eq!(code(&replay), 0, "{}", String::from_utf8_lossy(&replay.stderr));
    assert_eq!(code(&direct), 0);
    assert_eq!(direct.stdout, replay.stdout);
}

#[test]
fn grid_prints_exact_endpoints() {
    let o = seeds(&["grid", "--schedule", "edm", "--steps", "4"]);
    let lines: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(lines[0], "node,t,sigma_bar,lambda");
    assert!(lines[1].starts_with("0,80.0,"));
    assert!(lines[4].starts_with("3,0.002,"));
    assert_eq!(lines[5], "4,0.0,0.0,");
}

#[test]
fn selftest_passes() {
    let o = seeds(&["selftest"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).lines().filter(|l| l.starts_with("PASS")).count() >= 8);
}
