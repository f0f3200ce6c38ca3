use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn cxlsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cxlsim"))
        .args(args)
        .env_remove("CXLSIM_THREADS")
        .output()
        .expect("spawn cxlsim")
}

fn ok(args: &[&str]) -> String {
    let out = cxlsim(args);
    assert!(
        out.status.success(),
        "cxlsim {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn preset_json(name: &str) -> Value {
    serde_json::from_str(&ok(&["presets", name])).unwrap()
}

/// Writes `preset` with its workload replaced and returns the path.
fn config_with(dir: &Path, preset: &str, workload: Value) -> PathBuf {
    let mut v = preset_json(preset);
    v["workload"] = workload;
    let path = dir.join(format!("{preset}.json"));
    fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_latency(preset: &str, out: &Path) {
    ok(&[
        "run", "--preset", preset,
        "--param", "workload.array_sizes=16384",
        "--param", "workload.samples=300",
        "--out", s(out),
    ]);
}

#[test]
fn presets_are_listed_and_printable() {
    let names: Vec<String> = ok(&["presets"]).lines().map(str::to_string).collect();
    assert_eq!(names, ["local-ddr", "cxl-dmsim-f", "cxl-dmsim-a", "cxl-ssd"]);
    for n in &names {
        assert_eq!(preset_json(n)["version"], 1);
    }
    assert!(!cxlsim(&["presets", "nope"]).status.success());
}

#[test]
fn run_writes_report_and_curve() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("a");
    small_latency("cxl-dmsim-a", &out);
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["workload"], "latency_sweep");
    assert!(report["outputs"]["plateau_ns"].as_f64().unwrap() > 0.0);
    let rows = csv_rows(&out.join("curve.csv"));
    assert_eq!(rows[0][0], "array_bytes");
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1][0], "16384");
}

#[test]
fn malformed_config_reports_line_and_field() {
    let tmp = TempDir::new().unwrap();
    let mut v = preset_json("cxl-dmsim-f");
    v["bridge"]["req_fifo_depth"] = json!(-1);
    let path = tmp.path().join("bad.json");
    fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    let out = cxlsim(&["run", "--config", s(&path), "--out", s(&tmp.path().join("o"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line"), "{err}");
    assert!(err.contains("bridge.req_fifo_depth"), "{err}");
    assert!(!tmp.path().join("o").join("report.json").exists());
}

#[test]
fn bad_params_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let o = tmp.path().join("o");
    for p in ["workload.placement.mode=3", "bridge.no_such_field=1", "bridge.req_fifo_depth"] {
        let out = cxlsim(&["run", "--preset", "local-ddr", "--param", p, "--out", s(&o)]);
        assert!(!out.status.success(), "{p} accepted");
    }
}

#[test]
fn sweep_is_ordered_and_reproducible() {
    let tmp = TempDir::new().unwrap();
    let cfg = config_with(
        tmp.path(),
        "cxl-dmsim-a",
        json!({
            "kind": "rdwr_sweep",
            "read_fractions": [0.5],
            "rates_gbps": [1000.0],
            "footprint": 1 << 20,
            "requests": 200,
            "injectors": 2,
            "lsq_depth": 4,
            "placement": {"mode": "bind", "node": 1}
        }),
    );
    let run = |name: &str, threads: &str| {
        let out = tmp.path().join(name);
        ok(&[
            "sweep", "--config", s(&cfg),
            "--param", "workload.read_fractions",
            "--grid", "0.5:1.0:21",
            "--threads", threads,
            "--out", s(&out),
        ]);
        out
    };
    let a = run("a", "1");
    let b = run("b", "3");
    let rows = csv_rows(&a.join("curve.csv"));
    assert_eq!(rows[0][0], "workload.read_fractions");
    assert_eq!(rows.len(), 22);
    let xs: Vec<f64> = rows[1..].iter().map(|r| r[0].parse().unwrap()).collect();
    assert!(xs.windows(2).all(|w| w[0] < w[1]), "{xs:?}");
    assert_eq!((xs[0], xs[20]), (0.5, 1.0));
    assert!(a.join("point-000").join("report.json").exists());
    assert_eq!(
        fs::read(a.join("curve.csv")).unwrap(),
        fs::read(b.join("curve.csv")).unwrap(),
        "thread count changed the result"
    );
}

#[test]
fn report_merges_runs_into_figures() {
    let tmp = TempDir::new().unwrap();
    let dirs: Vec<PathBuf> = ["local-ddr", "cxl-dmsim-a", "cxl-dmsim-f"]
        .iter()
        .map(|p| {
            let d = tmp.path().join(p);
            small_latency(p, &d);
            d
        })
        .collect();
    let fig = tmp.path().join("latency.csv");
    ok(&["report", "--figure", "latency", "--out", s(&fig), s(&dirs[0]), s(&dirs[1]), s(&dirs[2])]);
    let rows = csv_rows(&fig);
    assert_eq!(rows[0], ["array_bytes", "local-ddr", "cxl-dmsim-a", "cxl-dmsim-f"]);
    let lat: Vec<f64> = rows[1][1..].iter().map(|v| v.parse().unwrap()).collect();
    assert!(lat.iter().all(|&l| l > 0.0));

    // A latency run cannot feed the congestion table.
    let out = cxlsim(&["report", "--figure", "congestion", "--out", s(&fig), s(&dirs[0])]);
    assert!(!out.status.success());

    let cfg = config_with(
        tmp.path(),
        "cxl-dmsim-a",
        json!({
            "kind": "dlrm_proxy",
            "injectors": 4,
            "lsq_depth": 8,
            "footprint": 64 << 20,
            "lookups_per_query": 4,
            "hot_loads_per_query": 4,
            "queries_per_injector": 20,
            "placement": {"mode": "bind", "node": 1}
        }),
    );
    let d = tmp.path().join("dlrm");
    ok(&["run", "--config", s(&cfg), "--out", s(&d)]);
    let cg = tmp.path().join("congestion.csv");
    ok(&["report", "--figure", "congestion", "--out", s(&cg), s(&d)]);
    let rows = csv_rows(&cg);
    assert_eq!(rows.len(), 11);
    assert_eq!(rows[1][0], "aggregateQps");
    assert!(rows[1][1].parse::<f64>().unwrap() > 0.0);
}
