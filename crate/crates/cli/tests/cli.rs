use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn sera(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sera"))
        .args(args)
        .args(["--out-dir", dir.to_str().unwrap()])
        .env_remove("SERA_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = sera(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn pipeline(dir: &Path, extra: &[&str]) {
    for cmd in ["gen", "weights", "recover"] {
        let mut args = vec![cmd];
        args.extend_from_slice(extra);
        ok(dir, &args);
    }
}

#[test]
fn gen_is_reproducible_and_reports_l() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(a.path(), &["gen", "--seed", "7"]);
    ok(b.path(), &["gen", "--seed", "7"]);
    assert_eq!(fs::read(a.path().join("samples.csv")).unwrap(), fs::read(b.path().join("samples.csv")).unwrap());
    let ta = json(&a.path().join("target.json"));
    let tb = json(&b.path().join("target.json"));
    assert_eq!(ta["target"], tb["target"]);
    assert_eq!(ta["L"], 3);
    assert_eq!(ta["config"]["seed"], 7);
    let csv = fs::read_to_string(a.path().join("samples.csv")).unwrap();
    assert!(csv.starts_with("y_1,value\n"));
    assert!(!csv.contains('\r'));
    // Default geometry: level 2n = 8 lattice.
    assert_eq!(csv.lines().count() - 1, 577);
}

#[test]
fn config_file_and_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"count": 2, "seed": 3}"#).unwrap();
    let out = ok(dir.path(), &["gen", "--config", cfg.to_str().unwrap(), "--count", "1"]);
    assert!(out.contains("L = 1"), "{out}");
    assert_eq!(json(&dir.path().join("target.json"))["config"]["seed"], 3);
}

#[test]
fn weights_cache_and_mode_switch() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen"]);
    let first = ok(dir.path(), &["weights"]);
    assert!(first.contains("solved"));
    let meta = json(&dir.path().join("weights.json"));
    assert!(meta["diagnostics"]["product_orthogonality_residual"].as_f64().unwrap() <= 1e-6);
    assert_eq!(meta["mode"], "moment_exact");
    let again = ok(dir.path(), &["weights"]);
    assert!(again.contains("cached"), "{again}");
    let literal = ok(dir.path(), &["weights", "--weights-mode", "paper_literal"]);
    assert!(literal.contains("solved"));
    assert_eq!(json(&dir.path().join("weights.json"))["mode"], "paper_literal");
}

#[test]
fn recover_three_spikes() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path(), &[]);
    let spikes = json(&dir.path().join("spikes.json"));
    let target = json(&dir.path().join("target.json"));
    assert_eq!(spikes["count"], 3);
    let mut truth: Vec<f64> =
        target["target"]["centers"].as_array().unwrap().iter().map(|c| c[0].as_f64().unwrap()).collect();
    truth.sort_by(f64::total_cmp);
    let mut found: Vec<f64> = spikes["centers"].as_array().unwrap().iter().map(|c| c[0].as_f64().unwrap()).collect();
    found.sort_by(f64::total_cmp);
    for (t, f) in truth.iter().zip(&found) {
        assert!((t - f).abs() < 0.2, "{t} vs {f}");
    }
    assert!(spikes["diagnostics"]["sufficiency"].is_object());
    for f in ["field_n.csv", "field_N.csv"] {
        assert!(fs::read_to_string(dir.path().join(f)).unwrap().starts_with("x_1,value\n"));
    }
}

#[test]
fn zero_data_gives_no_spikes() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path(), &["--count", "0"]);
    assert_eq!(json(&dir.path().join("spikes.json"))["count"], 0);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // Missing inputs and bad configuration are input errors.
    assert_eq!(sera(dir.path(), &["recover"]).status.code(), Some(2));
    assert_eq!(sera(dir.path(), &["gen", "--no-such-key", "1"]).status.code(), Some(2));
    assert_eq!(sera(dir.path(), &["gen", "--rho", "0.5"]).status.code(), Some(2));
    let threads = Command::new(env!("CARGO_BIN_EXE_sera"))
        .args(["verify", "--out-dir", dir.path().to_str().unwrap()])
        .env("SERA_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(threads.status.code(), Some(2));
    // A threshold far below the kernel's resolution merges the blobs into
    // one oversized cluster.
    ok(dir.path(), &["gen"]);
    ok(dir.path(), &["weights"]);
    let out = sera(dir.path(), &["recover", "--mu", "0.05"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cluster geometry"));
}

#[test]
fn separate_single_exponential_and_zero() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path(), &["--kind", "exp_sum", "--count", "0"]);
    ok(dir.path(), &["gen", "--kind", "exp_sum", "--exponents", "[[1.0]]", "--coefficients", "[1.0]"]);
    ok(dir.path(), &["weights"]);
    ok(dir.path(), &["separate"]);
    let r = json(&dir.path().join("exponents.json"));
    assert_eq!(r["count"], 1);
    let b = r["coefficients"][0].as_f64().unwrap();
    assert!((b - 1.0).abs() < 0.1, "{b}");
    // b = π^{-q/2} e^{-|y|²} a from the embedded spikes.
    let y = r["spikes"]["centers"][0][0].as_f64().unwrap();
    let a = r["spikes"]["amplitudes"][0].as_f64().unwrap();
    let recomputed = std::f64::consts::PI.powf(-0.5) * (-y * y).exp() * a;
    assert!((recomputed - b).abs() <= 1e-12 * b.abs());

    let zero = tempfile::tempdir().unwrap();
    ok(zero.path(), &["gen", "--kind", "exp_sum"]);
    ok(zero.path(), &["weights"]);
    ok(zero.path(), &["separate"]);
    assert_eq!(json(&zero.path().join("exponents.json"))["count"], 0);
}

#[test]
fn verify_passes_and_tightening_fails() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["verify", "--n", "3"]);
    let report = json(&dir.path().join("verify.json"));
    assert_eq!(report["pass"], true);
    let checks = report["checks"].as_array().unwrap();
    let names: Vec<&str> = checks.iter().map(|c| c["name"].as_str().unwrap()).collect();
    for name in ["mehler_series", "mehler_special", "bridge_identity", "product_orthogonality", "operator_gap"] {
        assert!(names.contains(&name), "{names:?}");
    }
    assert!(checks.iter().all(|c| c["tolerance"].as_f64().unwrap() > 0.0));

    let strict = tempfile::tempdir().unwrap();
    for _ in 0..2 {
        ok(strict.path(), &["verify", "--n", "3", "--tolerance-scale", "1e-20"]);
        let r = json(&strict.path().join("verify.json"));
        assert_eq!(r["pass"], false);
        assert!(r["checks"].as_array().unwrap().iter().all(|c| c["pass"] == false));
    }
}

#[test]
fn recover_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path(), &["--seed", "11"]);
    pipeline(b.path(), &["--seed", "11"]);
    let strip = |p: &Path| {
        let mut v = json(p);
        v["config"]["out_dir"] = Value::Null;
        serde_json::to_string(&v).unwrap()
    };
    assert_eq!(strip(&a.path().join("spikes.json")), strip(&b.path().join("spikes.json")));
    assert_eq!(fs::read(a.path().join("field_N.csv")).unwrap(), fs::read(b.path().join("field_N.csv")).unwrap());
}
