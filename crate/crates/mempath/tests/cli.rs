use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mempath::{load_graph, load_result};
use tempfile::TempDir;

fn mempath(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mempath"))
        .args(args)
        .env("MEMPATH_WORKERS", "1")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate_grid(dir: &TempDir, name: &str, seed: u64) -> PathBuf {
    let out = dir.path().join(name);
    let seed = seed.to_string();
    let o = mempath(&[
        "generate",
        "grid",
        "--rows",
        "8",
        "--cols",
        "8",
        "--removal-prob",
        "0.3",
        "--seed",
        &seed,
        "--out",
        path_str(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

const TWO_BRANCH: &str = r#"{
  "nodes": [0, 1, 2],
  "edges": [
    {"id": 0, "u": 0, "v": 2},
    {"id": 1, "u": 0, "v": 1},
    {"id": 2, "u": 1, "v": 2}
  ],
  "start": 0,
  "end": 2
}
"#;

#[test]
fn generation_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let a = generate_grid(&dir, "a.json", 9);
    let b = generate_grid(&dir, "b.json", 9);
    let c = generate_grid(&dir, "c.json", 10);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
    let g = load_graph(&a).unwrap();
    assert_eq!(g.metadata["seed"], "9");
}

#[test]
fn solve_writes_result_and_trace() {
    let dir = TempDir::new().unwrap();
    let graph = generate_grid(&dir, "g.json", 4);
    let (result, trace) = (dir.path().join("r.json"), dir.path().join("t.csv"));
    let o = mempath(&[
        "solve",
        "--graph",
        path_str(&graph),
        "--out",
        path_str(&result),
        "--trace",
        path_str(&trace),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = load_result(&result).unwrap();
    let oracle = mempath_core::bfs_oracle(&load_graph(&graph).unwrap()).unwrap();
    assert!(r.success);
    assert_eq!(r.read_path, oracle.path);
    assert!(r.detection_time_s.unwrap() > 0.0 && r.energy_j > 0.0);
    let csv = fs::read_to_string(&trace).unwrap();
    assert_eq!(csv.lines().next(), Some("t_s,v_ctrl_V,i_total_A"));
    assert!(csv.lines().count() > 10);
}

#[test]
fn constant_protocol_on_hand_written_graph() {
    let dir = TempDir::new().unwrap();
    let graph = dir.path().join("two.json");
    fs::write(&graph, TWO_BRANCH).unwrap();
    let o = mempath(&[
        "solve",
        "--graph",
        path_str(&graph),
        "--protocol",
        "constant",
        "--v-ctrl",
        "1.5e-4",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["read_path"], serde_json::json!([0, 2]));
    assert!(r["normalized"].as_f64().unwrap() > 0.99);
    assert!(r["detection_time_s"].is_null());
}

#[test]
fn sweep_reports_optimum() {
    let dir = TempDir::new().unwrap();
    let graph = dir.path().join("two.json");
    fs::write(&graph, TWO_BRANCH).unwrap();
    let o = mempath(&[
        "sweep-voltage",
        "--graph",
        path_str(&graph),
        "--v-min",
        "0.5e-4",
        "--v-max",
        "2.75e-4",
        "--v-step",
        "0.75e-4",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["path_len"], 1);
    assert_eq!(r["curve"].as_array().unwrap().len(), 4);
    assert!((r["v_opt"].as_f64().unwrap() - 1.25e-4).abs() < 1e-12);
}

#[test]
fn detection_failure_still_writes_result() {
    let dir = TempDir::new().unwrap();
    let graph = dir.path().join("two.json");
    fs::write(&graph, TWO_BRANCH).unwrap();
    let result = dir.path().join("r.json");
    let o = mempath(&[
        "solve",
        "--graph",
        path_str(&graph),
        "--v0",
        "1e-5",
        "--rate",
        "1e-9",
        "--t-max",
        "1",
        "--out",
        path_str(&result),
    ]);
    assert_eq!(code(&o), 4);
    let r = load_result(&result).unwrap();
    assert!(!r.success);
    assert_eq!(r.detection_time_s, None);
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("missing.json");
    assert_eq!(code(&mempath(&["solve", "--graph", path_str(&missing)])), 5);

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"nodes\": [0, 1], \"edges\": []}\n").unwrap();
    let o = mempath(&["solve", "--graph", path_str(&bad)]);
    assert_eq!(code(&o), 6);
    assert!(String::from_utf8_lossy(&o.stderr).contains("start"));

    assert_eq!(code(&mempath(&["solve"])), 2);
    assert_eq!(code(&mempath(&["frobnicate"])), 2);

    let out = dir.path().join("g.json");
    let o = mempath(&[
        "generate",
        "grid",
        "--rows",
        "3",
        "--cols",
        "3",
        "--min-path-len",
        "50",
        "--max-attempts",
        "5",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(code(&o), 3);
    assert!(!out.exists());

    let cfg = dir.path().join("c.toml");
    fs::write(
        &cfg,
        "master_seed = 1\ninstance_count = 0\n[topology]\nkind = \"grid\"\nsides = [6]\nremoval_prob = [0.3]\n",
    )
    .unwrap();
    assert_eq!(code(&mempath(&["batch", "--config", path_str(&cfg)])), 2);

    fs::write(&cfg, "master_seed = 1\ninstance_count = 2\nbogus = 3\n").unwrap();
    let o = mempath(&["batch", "--config", path_str(&cfg)]);
    assert_eq!(code(&o), 6);
}

const BATCH: &str = r#"
master_seed = 17
instance_count = 24

[topology]
kind = "grid"
sides = [5, 6, 7, 8, 9, 10]
removal_prob = [0.2, 0.3]
"#;

#[test]
fn batch_records_do_not_depend_on_worker_count() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("b.toml");
    fs::write(&cfg, BATCH).unwrap();
    let run = |workers: &str, name: &str| {
        let records = dir.path().join(name);
        let o = mempath(&[
            "batch",
            "--config",
            path_str(&cfg),
            "--records",
            path_str(&records),
            "--workers",
            workers,
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(records).unwrap()
    };
    let one = run("1", "r1.csv");
    let three = run("3", "r3.csv");
    assert_eq!(one, three);
    let text = String::from_utf8(one).unwrap();
    assert_eq!(text.lines().count(), 25);

    let records = dir.path().join("r1.csv");
    let (summary, hist) = (dir.path().join("s.json"), dir.path().join("h.csv"));
    let o = mempath(&[
        "summarize",
        "--records",
        path_str(&records),
        "--out",
        path_str(&summary),
        "--histogram",
        path_str(&hist),
        "--bins",
        "10",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(summary).unwrap()).unwrap();
    let rho = s["spearman_time_vs_n"].as_f64().unwrap();
    assert!((-1.0..=1.0).contains(&rho) && rho > 0.8, "{rho}");
    assert_eq!(fs::read_to_string(hist).unwrap().lines().count(), 11);
}

#[test]
fn summarize_needs_enough_records() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("b.toml");
    fs::write(&cfg, BATCH.replace("instance_count = 24", "instance_count = 3")).unwrap();
    let records = dir.path().join("r.csv");
    assert_eq!(
        code(&mempath(&[
            "batch",
            "--config",
            path_str(&cfg),
            "--records",
            path_str(&records)
        ])),
        0
    );
    assert_eq!(code(&mempath(&["summarize", "--records", path_str(&records)])), 8);
}
