//! Command-line behaviour through the built binary: outputs, determinism and exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use patchgraph::evalstat::{EvalReport, Interval, MetricTable, StatsTable};
use patchgraph::slideio::{read_mask_pgm, write_mask_pgm, Mask};
use tempfile::TempDir;

fn patchgraph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_patchgraph"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_is_deterministic_in_seed() {
    let tmp = TempDir::new().unwrap();
    let run = |name: &str, seed: &str| {
        let dir = tmp.path().join(name);
        let out = patchgraph(&["synth", "--out", &s(&dir), "--patients", "10", "--dim", "6", "--seed", seed]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        tree(&dir)
    };
    let a = run("a", "3");
    let b = run("b", "3");
    let c = run("c", "4");
    // manifest plus one feature file per slide and magnification
    assert_eq!(a.len(), 1 + 10 * 2);
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn grid_at_5x_steps_by_2048_native_pixels() {
    let tmp = TempDir::new().unwrap();
    let mask_path = tmp.path().join("mask.pgm");
    let mut mask = Mask::filled(4096, 4096, true);
    // bottom-right tile has no tissue
    for y in 2048..4096 {
        for x in 2048..4096 {
            mask.set(x, y, false);
        }
    }
    write_mask_pgm(&mask, &mask_path).unwrap();
    let out_path = tmp.path().join("grid.csv");
    let out = patchgraph(&[
        "grid",
        "--mask",
        &s(&mask_path),
        "--native-mag",
        "40",
        "--target-mag",
        "5",
        "--out",
        &s(&out_path),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&out_path).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let xy: Vec<(&str, &str)> = rows.iter().map(|r| (r[3], r[4])).collect();
    assert_eq!(xy, [("0", "0"), ("2048", "0"), ("0", "2048")]);
}

#[test]
fn segment_writes_a_mask_of_saturated_pixels() {
    let tmp = TempDir::new().unwrap();
    let image = tmp.path().join("slide.ppm");
    // grey, red, white, blue
    let mut bytes = b"P6\n2 2\n255\n".to_vec();
    bytes.extend_from_slice(&[128, 128, 128, 200, 40, 40, 255, 255, 255, 30, 30, 220]);
    fs::write(&image, bytes).unwrap();
    let mask_path = tmp.path().join("mask.pgm");
    let out = patchgraph(&["segment", "--image", &s(&image), "--out", &s(&mask_path)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mask = read_mask_pgm(&mask_path).unwrap();
    assert_eq!(
        [mask.get(0, 0), mask.get(1, 0), mask.get(0, 1), mask.get(1, 1)],
        [false, true, false, true]
    );
}

#[test]
fn missing_manifest_is_an_io_error_and_writes_nothing() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("config.json");
    fs::write(&cfg, patchgraph::pipeline::ModelConfig::graph_10x_20x().to_json()).unwrap();
    let report = tmp.path().join("report.json");
    let out = patchgraph(&[
        "eval",
        "--manifest",
        &s(&tmp.path().join("absent.csv")),
        "--models",
        &s(tmp.path()),
        "--config",
        &s(&cfg),
        "--out",
        &s(&report),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!report.exists());
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn invalid_input_exits_1() {
    let out = patchgraph(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    let out = patchgraph(&["synth", "--out", "/tmp/never", "--mags", "5,20"]);
    assert_eq!(out.status.code(), Some(1));

    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("config.json");
    let mut v: serde_json::Value =
        serde_json::from_str(&patchgraph::pipeline::ModelConfig::baseline().to_json()).unwrap();
    v["pooling_factor"] = serde_json::json!(2.0);
    fs::write(&cfg, v.to_string()).unwrap();
    let out = patchgraph(&[
        "train",
        "--manifest",
        "unused.csv",
        "--config",
        &s(&cfg),
        "--out",
        &s(&tmp.path().join("models")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!tmp.path().join("models").exists());
}

#[test]
fn version_and_help_exit_0() {
    let out = patchgraph(&["--version"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains(env!("CARGO_PKG_VERSION")));
    let out = patchgraph(&["eval", "--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("--bootstrap"));
}

fn fake_report(ba: [f64; 5]) -> EvalReport {
    let iv = Interval { mean: 0.8, ci_low: 0.7, ci_high: 0.9 };
    EvalReport {
        metrics: MetricTable { balanced_accuracy: iv, auroc: iv, f1: iv },
        per_fold: MetricTable {
            balanced_accuracy: ba.to_vec(),
            auroc: vec![0.9, 0.91, 0.92, 0.93, 0.94],
            f1: ba.iter().map(|v| v - 0.05).collect(),
        },
        confusion: [[0; 5]; 5],
        bootstrap_iters: 100,
        seed: 0,
    }
}

#[test]
fn stats_compares_per_fold_metrics() {
    let tmp = TempDir::new().unwrap();
    let base = tmp.path().join("base.json");
    let a = tmp.path().join("a.json");
    let b = tmp.path().join("b.json");
    fs::write(&base, fake_report([0.75, 0.80, 0.74, 0.79, 0.77]).to_json()).unwrap();
    fs::write(&a, fake_report([0.80, 0.82, 0.78, 0.85, 0.81]).to_json()).unwrap();
    fs::write(&b, fake_report([0.75, 0.80, 0.74, 0.79, 0.77]).to_json()).unwrap();
    let out_path = tmp.path().join("stats.json");
    let out = patchgraph(&[
        "stats",
        "--baseline",
        &s(&base),
        "--others",
        &s(&a),
        &s(&b),
        "--out",
        &s(&out_path),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table: StatsTable = serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(table.comparisons.len(), 6);
    let first = &table.comparisons[0];
    assert!(first.model.ends_with("a.json"));
    assert!((first.p_value - 0.0031848127817188835).abs() < 1e-6);
    // identical per-fold values: no difference, p = 1
    assert_eq!(table.comparisons[1].p_value, 1.0);
    assert!(table.comparisons.iter().all(|c| c.p_adjusted >= c.p_value));

    let out = patchgraph(&["stats", "--baseline", &s(&base), "--others", &s(&a), "--adjust", "bonferroni", "--out", &s(&out_path)]);
    assert_eq!(out.status.code(), Some(1));
}
