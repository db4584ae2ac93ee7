//! Small end-to-end runs through the library entry points and the binary.

use std::path::Path;
use std::process::Command;

use microtop::config::{parse_override, resolve, ProblemConfig};
use microtop::output::read_dump;
use microtop::run::{analyze, optimize};

fn tiny_robust() -> ProblemConfig {
    let overrides: Vec<_> = [
        "geometry.mx=2",
        "geometry.n=10",
        "filter.rmin=2.5",
        "projection.mode=robust",
        "projection.etas=[0.3,0.5,0.7]",
        "projection.beta0=4",
        "projection.beta1=8",
        "projection.p1=3",
        "solver.lambda_threshold=0.02",
        "optimizer.max_iter=12",
        "optimizer.stage_cap=4",
    ]
    .iter()
    .map(|s| parse_override(s).unwrap())
    .collect();
    resolve(None, &overrides).unwrap()
}

fn csv_rows_without_timing(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().clone();
    assert_eq!(header.iter().last(), Some("seconds"));
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            rec.iter().take(rec.len() - 1).map(String::from).collect()
        })
        .collect()
}

fn pgm_size(path: &Path) -> (usize, usize) {
    let bytes = std::fs::read(path).unwrap();
    let text = String::from_utf8_lossy(&bytes[..20.min(bytes.len())]).to_string();
    let mut it = text.split_whitespace();
    assert_eq!(it.next(), Some("P5"));
    let w: usize = it.next().unwrap().parse().unwrap();
    let h: usize = it.next().unwrap().parse().unwrap();
    (w, h)
}

#[test]
fn robust_run_writes_artifacts_deterministically() {
    let cfg = tiny_robust();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (result, summary) = optimize(&cfg, a.path(), None).unwrap();
    optimize(&cfg, b.path(), None).unwrap();

    for eta in ["0.30", "0.50", "0.70"] {
        assert_eq!(pgm_size(&a.path().join(format!("final_eta{eta}.pgm"))), (10, 10));
        assert!(a.path().join(format!("stage0_eta{eta}.pgm")).exists());
    }
    assert_eq!(pgm_size(&a.path().join("macro.pgm")), (40, 20));
    assert!(a.path().join("summary.json").exists());

    let rows = csv_rows_without_timing(&a.path().join("convergence.csv"));
    assert_eq!(rows.len(), summary.iterations);
    assert_eq!(rows, csv_rows_without_timing(&b.path().join("convergence.csv")));

    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(json["basis_builds"].as_u64().unwrap() as usize, result.basis_builds);
    assert_eq!(json["final_compliances"].as_array().unwrap().len(), 3);

    let design = read_dump(&a.path().join("design.bin")).unwrap();
    assert_eq!(design, result.design);
    let report = analyze(&cfg, &design).unwrap();
    let last = result.records.last().unwrap();
    for (x, y) in report.compliances.iter().zip(&last.compliances) {
        assert!((x - y).abs() < 1e-5 * y, "{x} vs {y}");
    }
}

#[test]
fn restart_continues_from_dump() {
    let cfg = tiny_robust();
    let a = tempfile::tempdir().unwrap();
    let (first, _) = optimize(&cfg, a.path(), None).unwrap();
    let x = read_dump(&a.path().join("design.bin")).unwrap();
    let b = tempfile::tempdir().unwrap();
    let (second, _) = optimize(&cfg, b.path(), Some(x)).unwrap();
    let f0 = first.records[0].objective;
    let g0 = second.records[0].objective;
    assert!(g0 < f0, "restart should start from the optimised design ({g0} vs {f0})");
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_microtop"))
}

#[test]
fn binary_resolves_presets_and_rejects_unknown_keys() {
    let out = bin()
        .args(["config", "-s", "preset=doubleclamped-robust-Mx16"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["projection"]["etas"], serde_json::json!([0.3, 0.5, 0.7]));
    assert_eq!(v["projection"]["beta0"], 16.0);

    let out = bin().args(["config", "-s", "solver.bogus=1"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("solver.bogus"));
}

#[test]
fn binary_optimize_and_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, serde_json::to_string(&tiny_robust()).unwrap()).unwrap();
    let out_dir = dir.path().join("run");
    let status = bin()
        .args(["optimize", cfg_path.to_str().unwrap(), "--threads", "1", "--solver", "direct", "--output-dir"])
        .arg(&out_dir)
        .status()
        .unwrap();
    assert!(status.success());
    let out = bin()
        .args(["analyze", cfg_path.to_str().unwrap()])
        .arg(out_dir.join("design.bin"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["compliances"].as_array().unwrap().len(), 3);
}
