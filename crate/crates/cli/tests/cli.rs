use std::path::Path;
use std::process::{Command, Output};

const K4: &str = r#"{"vertices":4,"edges":[[0,1,1],[0,2,1],[0,3,1],[1,2,1],[1,3,1],[2,3,1]]}"#;

fn rwalk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rwalk"))
        .args(args)
        .output()
        .expect("spawn rwalk")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn verify_reports_are_byte_identical() {
    let a = rwalk(&["verify", "--suite", "finite-ust", "--seed", "7"]);
    let b = rwalk(&["verify", "--suite", "finite-ust", "--seed", "7"]);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let report: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(report["seed"], 7);
    assert_eq!(report["checks"].as_array().unwrap().len(), 1);
}

#[test]
fn k4_has_sixteen_trees() {
    let dir = tempfile::tempdir().unwrap();
    let g = write(dir.path(), "k4.json", K4);
    let o = rwalk(&["forest", "exact", "--graph", &g]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["count"], 16);
    let trees = v["trees"].as_array().unwrap();
    assert_eq!(trees.len(), 16);
    for t in trees {
        assert_eq!(t["edges"].as_array().unwrap().len(), 3);
        assert!((t["probability"].as_f64().unwrap() - 1.0 / 16.0).abs() < 1e-12);
    }
}

#[test]
fn missing_graph_is_a_usage_error() {
    let o = rwalk(&["walk", "simulate", "--level", "2", "--stop", "steps=3", "--seed", "1"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--graph"));
}

#[test]
fn missing_seed_and_unknown_flags_are_usage_errors() {
    let o = rwalk(&["walk", "simulate", "--graph", "tree:2", "--level", "2", "--stop", "steps=3"]);
    assert_eq!(code(&o), 1);
    let o = rwalk(&["zoo", "--graph", "tree:2", "--level", "2", "--frobnicate"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(code(&rwalk(&["--help"])), 0);
}

#[test]
fn numerical_failure_exits_two() {
    let o = rwalk(&[
        "harmonic", "hm", "--graph", "lattice:3", "--targets", "0:0:0,1:0:0", "--from", "0:0:2",
        "--cauchy-tol", "1e-14", "--n-max", "5",
    ]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn failed_verification_exits_three() {
    let o = rwalk(&["verify", "--suite", "wilson-escape", "--seed", "1", "--replicas", "50"]);
    assert_eq!(code(&o), 3);
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["passed"], false);
}

#[test]
fn trajectories_do_not_depend_on_thread_count() {
    let base = [
        "walk", "simulate", "--graph", "tree:2", "--level", "3", "--stop", "hit=9,10",
        "--seed", "11", "--replicas", "16",
    ];
    let one = rwalk(&[&base[..], &["--threads", "1"]].concat());
    let four = rwalk(&[&base[..], &["--threads", "4"]].concat());
    assert_eq!(code(&one), 0);
    assert_eq!(one.stdout, four.stdout);
    let text = String::from_utf8(one.stdout).unwrap();
    let stops: Vec<serde_json::Value> = text
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .filter(|v| v["event"] == "stop")
        .collect();
    assert_eq!(stops.len(), 16);
    assert!(stops.iter().all(|v| v["reason"] == "hit_set"));
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", "graph = \"tree:2\"\nlevel = 2\nseed = 5\n");
    let a = rwalk(&["--config", &cfg, "walk", "simulate", "--stop", "steps=20"]);
    let b = rwalk(&[
        "walk", "simulate", "--graph", "tree:2", "--level", "2", "--seed", "5", "--stop", "steps=20",
    ]);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let c = rwalk(&["--config", &cfg, "walk", "simulate", "--stop", "steps=20", "--seed", "6"]);
    assert_ne!(a.stdout, c.stdout);
    let bad = write(dir.path(), "bad.toml", "colour = 3\n");
    assert_eq!(code(&rwalk(&["--config", &bad, "zoo"])), 1);
}

#[test]
fn gff_csv_is_reproducible() {
    let args = [
        "gff", "sample", "--graph", "tree:2", "--killing", "0", "--window", "0,1,2,3,4",
        "--seed", "3", "--replicas", "5",
    ];
    let a = rwalk(&args);
    let b = rwalk(&args);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "0,1,2,3,4");
    assert_eq!(lines.len(), 6);
    assert!(lines[1..].iter().all(|l| l.starts_with("0.00000000000000000e0,")));
}

#[test]
fn grid_svg_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let p1 = dir.path().join("a.svg");
    let p2 = dir.path().join("b.svg");
    for p in [&p1, &p2] {
        let o = rwalk(&["embed", "--builtin", "grid:3x3", "--svg", p.to_str().unwrap()]);
        assert_eq!(code(&o), 0);
        let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(v["convexity"]["passed"], true);
    }
    let a = std::fs::read(&p1).unwrap();
    assert_eq!(a, std::fs::read(&p2).unwrap());
    let svg = String::from_utf8(a).unwrap();
    assert_eq!(svg.matches("class=\"vertex\"").count(), 9);
}

#[test]
fn map_json_round_trips_through_embed() {
    let dir = tempfile::tempdir().unwrap();
    let map = reflected_walk::planar::PlanarMap::wheel(6).unwrap();
    let path = write(dir.path(), "wheel.json", &map.to_json_string());
    let o = rwalk(&["embed", "--map", &path]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let hm = v["embedding"]["harmonic_measure"].as_array().unwrap();
    assert_eq!(hm.len(), 6);
    assert!(hm.iter().all(|p| (p.as_f64().unwrap() - 1.0 / 6.0).abs() < 1e-9));
}
