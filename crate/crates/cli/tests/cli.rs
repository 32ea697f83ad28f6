use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn cmm(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmm"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stderr)))
}

fn random_walk(seed: u64, steps: usize) -> Vec<Vec<f64>> {
    // Small LCG so the test needs no RNG dependency.
    let mut state = seed;
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let mut pos = [0.0; 3];
    (0..steps)
        .map(|_| {
            for p in &mut pos {
                *p += next();
            }
            pos.to_vec()
        })
        .collect()
}

#[test]
fn malformed_config_exits_two_and_names_the_field() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &json!({"problem": {"variant": "entropic", "instance": "synthetic", "lambda": 1.0}, "solver": {"grad_tol": "small"}}),
    );
    let out = cmm(&["solve", "--config", cfg.to_str().unwrap(), "--out", "run"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "config");
    assert_eq!(err["field"], "solver.grad_tol");

    let cfg = write_config(dir.path(), "d.json", &json!({"problem": {"variant": "entropic", "instance": "synthetic", "lambda": 1.0, "qexp": 2}}));
    let out = cmm(&["solve", "--config", cfg.to_str().unwrap(), "--out", "run"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["field"], "problem.qexp");

    let cfg = write_config(dir.path(), "e.json", &json!({"problem": {"variant": "entropic", "instance": "synthetic", "lambda": -1.0}}));
    let out = cmm(&["solve", "--config", cfg.to_str().unwrap(), "--out", "run"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["field"], "problem.lambda");
    assert!(!dir.path().join("run").exists());
}

#[test]
fn command_mismatch_and_missing_out_are_config_errors() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", &json!({"command": "check", "problem": {"variant": "classic", "instance": "synthetic"}}));
    let out = cmm(&["solve", "--config", cfg.to_str().unwrap(), "--out", "run"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["field"], "command");
    let out = cmm(&["check", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["field"], "out");
}

#[test]
fn classic_solve_writes_plans_and_lp_gap() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", &json!({"problem": {"variant": "classic", "instance": "synthetic"}, "seed": 4}));
    let out = cmm(&["solve", "--config", cfg.to_str().unwrap(), "--out", "run"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("run");
    for name in ["config.json", "report.csv", "plan.txt", "plan.json", "lp_plan.txt", "lp_plan.json", "summary.json"] {
        assert!(run.join(name).exists(), "{name}");
    }
    let cmp = read_json(&run.join("lp_comparison.json"));
    let (lp, cmm_cost) = (cmp["lp_cost"].as_f64().unwrap(), cmp["cmm_cost"].as_f64().unwrap());
    assert!(cmm_cost >= lp);
    assert!(cmp["relative_gap"].as_f64().unwrap() < 0.02);
    assert!(cmp["lp_nonzeros"].as_u64().unwrap() <= 12);
    assert!(cmp["cmm_min_entry"].as_f64().unwrap() > 0.0);
    let plan = read_json(&run.join("plan.json"));
    assert_eq!(plan["rows"], 8);
    assert_eq!(plan["cols"], 5);
}

#[test]
fn entropic_solve_writes_sinkhorn_comparison() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", &json!({"problem": {"variant": "entropic", "instance": "synthetic", "lambda": 1.0}}));
    let out = cmm(&["solve", "--config", cfg.to_str().unwrap(), "--out", "run", "--solver", "rtr"], dir.path());
    assert!(out.status.success());
    let cmp = read_json(&dir.path().join("run/sinkhorn_comparison.json"));
    assert_eq!(cmp["sinkhorn_status"], "ok");
    assert!(cmp["plan_mse"].as_f64().unwrap() < 1e-6);
}

#[test]
fn every_artifact_carries_hash_and_seed() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", &json!({"problem": {"variant": "entropic", "instance": "synthetic", "lambda": 0.5}}));
    let out = cmm(&["solve", "--config", cfg.to_str().unwrap(), "--out", "run", "--seed", "17"], dir.path());
    assert!(out.status.success());
    let hash = read_json(&dir.path().join("run/config.json"))["config_hash"].as_str().unwrap().to_string();
    assert_eq!(hash.len(), 64);
    for entry in fs::read_dir(dir.path().join("run")).unwrap() {
        let path = entry.unwrap().path();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains(&hash), "{}", path.display());
        if path.extension().is_some_and(|e| e == "json") {
            assert_eq!(read_json(&path)["seed"], 17, "{}", path.display());
        }
    }
}

fn assert_same_files(a: &Path, b: &Path) {
    let mut names: Vec<_> = fs::read_dir(a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(!names.is_empty());
    for name in names {
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?}");
    }
}

#[test]
fn reruns_are_bitwise_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", &json!({"problem": {"variant": "squared", "instance": "synthetic", "lambda": 2.0}}));
    let cfg = cfg.to_str().unwrap();
    assert!(cmm(&["solve", "--config", cfg, "--out", "a"], dir.path()).status.success());
    assert!(cmm(&["solve", "--config", cfg, "--out", "b"], dir.path()).status.success());
    assert_same_files(&dir.path().join("a"), &dir.path().join("b"));

    let da = write_config(
        dir.path(),
        "da.json",
        &json!({"domain_adapt": {"n_per_class": 15, "n_test_per_class": 30, "angles": [40.0]}, "seed": 9}),
    );
    let da = da.to_str().unwrap();
    for run in ["da1", "da2"] {
        let out = cmm(&["domain-adapt", "--config", da, "--out", run, "--trials", "2", "--solver", "rtr"], dir.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_same_files(&dir.path().join("da1"), &dir.path().join("da2"));
    let table = fs::read_to_string(dir.path().join("da1/table.csv")).unwrap();
    assert_eq!(table.lines().count(), 2);
    let trials = fs::read_to_string(dir.path().join("da1/trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 3);
}

#[test]
fn sweep_has_one_row_per_grid_point_in_order() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", &json!({"sweep": {"grid": {"lo": 0.2, "hi": 50.0, "count": 7}}}));
    let out = cmm(&["sweep-lambda", "--config", cfg.to_str().unwrap(), "--out", "run"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut reader = csv::Reader::from_path(dir.path().join("run/sweep.csv")).unwrap();
    let headers = reader.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (lambda, mse, status) = (col("lambda"), col("mse"), col("cmm_status"));
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 7);
    let lambdas: Vec<f64> = rows.iter().map(|r| r[lambda].parse().unwrap()).collect();
    assert!(lambdas.windows(2).all(|w| w[0] < w[1]));
    for r in &rows {
        assert_eq!(&r[status], "ok");
        assert!(r[mse].parse::<f64>().unwrap() < 1e-6);
    }
}

#[test]
fn sweep_rejects_nonpositive_lambda() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", &json!({"sweep": {"lambdas": [1.0, 0.0]}}));
    let out = cmm(&["sweep-lambda", "--config", cfg.to_str().unwrap(), "--out", "run"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["field"], "sweep.lambdas[1]");
}

fn opw_distance(dir: &Path, name: &str, u: &Value, v: &Value) -> f64 {
    let cfg = write_config(dir, &format!("{name}.json"), &json!({"problem": {"variant": "order_preserving", "u": u, "v": v}}));
    let out = cmm(&["opw-dist", "--config", cfg.to_str().unwrap(), "--out", name, "--solver", "rtr"], dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    read_json(&dir.join(name).join("distance.json"))["distance"].as_f64().unwrap()
}

#[test]
fn opw_distance_is_symmetric_and_prefers_order() {
    let dir = TempDir::new().unwrap();
    let u = random_walk(1, 10);
    let v = random_walk(2, 10);
    let order = [7, 2, 9, 0, 4, 1, 8, 3, 6, 5];
    let shuffled: Vec<Vec<f64>> = order.iter().map(|&t| u[t].clone()).collect();
    let uv = opw_distance(dir.path(), "uv", &json!(u), &json!(v));
    let vu = opw_distance(dir.path(), "vu", &json!(v), &json!(u));
    assert!((uv - vu).abs() < 1e-6, "{uv} {vu}");
    let same = opw_distance(dir.path(), "uu", &json!(u), &json!(u));
    let other = opw_distance(dir.path(), "us", &json!(u), &json!(shuffled));
    assert!(same < other, "{same} {other}");
    assert!(dir.path().join("uv/plan.txt").exists());
}

#[test]
fn opw_rejects_empty_and_mismatched_sequences() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("empty.txt"), "").unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &json!({"problem": {"variant": "order_preserving", "u": {"file": "empty.txt"}, "v": [[1.0, 2.0]]}}),
    );
    let out = cmm(&["opw-dist", "--config", cfg.to_str().unwrap(), "--out", "run"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["field"], "problem.u");

    let cfg = write_config(
        dir.path(),
        "d.json",
        &json!({"problem": {"variant": "order_preserving", "u": [[1.0, 2.0]], "v": [[1.0, 2.0, 3.0]]}}),
    );
    let out = cmm(&["opw-dist", "--config", cfg.to_str().unwrap(), "--out", "run"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["field"], "problem.v");
}

#[test]
fn check_command_passes_for_each_variant() {
    let dir = TempDir::new().unwrap();
    let problems = [
        json!({"variant": "classic", "instance": "synthetic"}),
        json!({"variant": "entropic", "instance": "synthetic", "lambda": 0.3}),
        json!({"variant": "squared", "instance": "synthetic", "lambda": 2.0}),
        json!({"variant": "tsallis", "p": [1, 2], "q": [1.5, 1.5], "cost": [[0, 1], [2, 0]], "lambda": 0.5, "qexp": 1.5}),
        json!({"variant": "order_preserving", "u": random_walk(3, 5), "v": random_walk(4, 6)}),
    ];
    for (i, pb) in problems.iter().enumerate() {
        let cfg = write_config(dir.path(), &format!("c{i}.json"), &json!({"problem": pb, "check": {"directions": 4}}));
        let run = format!("run{i}");
        let out = cmm(&["check", "--config", cfg.to_str().unwrap(), "--out", &run], dir.path());
        assert!(out.status.success(), "{pb}: {}", String::from_utf8_lossy(&out.stderr));
        let doc = read_json(&dir.path().join(run).join("check.json"));
        assert_eq!(doc["passed"], true);
        assert_eq!(doc["directions_checked"], 4);
    }
}

#[test]
fn problem_descriptor_can_live_in_its_own_file() {
    let dir = TempDir::new().unwrap();
    fs::create_dir(dir.path().join("data")).unwrap();
    fs::write(dir.path().join("data/cost.txt"), "2 2\n0 1\n1 0\n").unwrap();
    write_config(
        &dir.path().join("data"),
        "problem.json",
        &json!({"variant": "entropic", "p": [1, 1], "q": [1, 1], "cost": {"file": "cost.txt"}, "lambda": 0.5}),
    );
    let cfg = write_config(dir.path(), "c.json", &json!({"problem": {"file": "data/problem.json"}, "out": "run"}));
    let out = cmm(&["solve", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read_json(&dir.path().join("run/summary.json"));
    assert_eq!(summary["status"], "converged");
}
