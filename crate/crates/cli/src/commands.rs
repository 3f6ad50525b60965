use std::fs;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use sera::io::{read_samples, to_json_string, write_samples, PointTable};
use sera::quadrature::{
    solve_weights, QuadratureDiagnostics, QuadratureMeasure, SampleSet, WeightsMode, WeightsOptions,
};
use sera::recovery::{separate_exponential_sum, Sera};
use sera::synthesis::{
    add_observation_noise, eval_blurred, eval_exp_sum, gen_sample_points, gen_target, ClutterSpec, ExpSum,
};
use sera::verification::{run_suite, VerifyOptions};
use sera::SERO_BOX_A;

use crate::config::{RunConfig, TargetKind};

/// Seed offsets so clutter and noise streams differ from the target stream.
const CLUTTER_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;
const NOISE_STREAM: u64 = 0xd1b5_4a32_d192_ed03;

/// Writes `{"config": cfg, ...payload}` as pretty JSON.
fn write_with_config<T: Serialize>(path: &Path, cfg: &RunConfig, payload: &T) -> Result<()> {
    let mut doc = serde_json::Map::new();
    doc.insert("config".into(), serde_json::to_value(cfg)?);
    match serde_json::to_value(payload)? {
        Value::Object(m) => doc.extend(m),
        other => {
            doc.insert("result".into(), other);
        }
    }
    fs::write(path, to_json_string(&Value::Object(doc))?).with_context(|| format!("writing {}", path.display()))
}

fn ensure_out_dir(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))
}

pub fn gen(cfg: &RunConfig) -> Result<()> {
    ensure_out_dir(cfg)?;
    let samples = gen_sample_points(&cfg.geometry())?;
    let points = samples.points();
    let (values, target) = match cfg.kind {
        TargetKind::Spikes => {
            let target = gen_target(cfg.seed, cfg.count, cfg.q, cfg.box_radius, cfg.eta, (cfg.amp_min, cfg.amp_max))?;
            let clutter = (cfg.clutter_bv > 0.0).then(|| {
                ClutterSpec::random_atomic(
                    cfg.seed ^ CLUTTER_STREAM,
                    cfg.clutter_atoms,
                    cfg.q,
                    cfg.box_radius,
                    cfg.clutter_bv,
                )
            });
            let mut values = eval_blurred(&target, clutter.as_ref(), points);
            add_observation_noise(&mut values, cfg.noise, cfg.seed ^ NOISE_STREAM);
            let doc = json!({ "kind": cfg.kind, "L": target.count(), "target": target, "clutter": clutter });
            (values, doc)
        }
        TargetKind::ExpSum => {
            if cfg.exponents.iter().any(|y| y.len() != cfg.q) {
                bail!("every exponent must have q = {} coordinates", cfg.q);
            }
            let sum = ExpSum::new(cfg.exponents.clone(), cfg.coefficients.clone())?;
            let mut values = eval_exp_sum(&sum, points)?;
            add_observation_noise(&mut values, cfg.noise, cfg.seed ^ NOISE_STREAM);
            let doc = json!({ "kind": cfg.kind, "L": sum.exponents.len(), "exp_sum": sum });
            (values, doc)
        }
    };
    let table = PointTable::new(points.clone(), values)?;
    write_samples(&cfg.samples_path(), &table)?;
    write_with_config(&cfg.out_dir.join("target.json"), cfg, &target)?;
    println!("gen: {} samples, L = {}", table.points.len(), target["L"]);
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct WeightsMeta {
    key: String,
    a: f64,
    level: f64,
    degree_budget: u32,
    mode: WeightsMode,
    diagnostics: QuadratureDiagnostics,
}

/// Hash of the samples file and every parameter the solve depends on.
fn weights_key(samples_bytes: &[u8], cfg: &RunConfig) -> Result<String> {
    let params = serde_json::to_vec(&json!({
        "a": SERO_BOX_A,
        "level": cfg.weights_level(),
        "mode": cfg.weights_mode,
        "beta_hat": cfg.beta_hat,
    }))?;
    let mut h = Sha256::new();
    h.update(samples_bytes);
    h.update(&params);
    Ok(hex::encode(h.finalize()))
}

fn read_meta(path: &Path) -> Option<WeightsMeta> {
    let text = fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

pub fn weights(cfg: &RunConfig) -> Result<()> {
    ensure_out_dir(cfg)?;
    let samples_path = cfg.samples_path();
    let bytes = fs::read(&samples_path).with_context(|| format!("reading {}", samples_path.display()))?;
    let key = weights_key(&bytes, cfg)?;
    let (csv_path, meta_path) = (cfg.weights_path(), cfg.weights_meta_path());
    if csv_path.exists() {
        if let Some(meta) = read_meta(&meta_path).filter(|m| m.key == key) {
            println!("weights: cached (key {}), solve skipped", &meta.key[..16]);
            return Ok(());
        }
    }
    let table = read_samples(&samples_path).with_context(|| format!("reading {}", samples_path.display()))?;
    let samples = SampleSet::new(table.points, SERO_BOX_A, cfg.weights_level())?;
    let options = WeightsOptions { mode: cfg.weights_mode, beta_hat: cfg.beta_hat, ..WeightsOptions::default() };
    let qm = solve_weights(&samples, &options)?;
    for w in &qm.diagnostics.warnings {
        log::warn!("{w}");
    }
    qm.write_csv(&csv_path)?;
    let meta = WeightsMeta {
        key,
        a: qm.a,
        level: qm.n,
        degree_budget: qm.degree_budget,
        mode: qm.mode,
        diagnostics: qm.diagnostics.clone(),
    };
    write_with_config(&meta_path, cfg, &meta)?;
    println!(
        "weights: solved {} weights, product orthogonality residual {:.3e}",
        qm.len(),
        qm.diagnostics.product_orthogonality_residual.unwrap_or(f64::NAN)
    );
    Ok(())
}

/// Samples and their weights; the two files must list the same points.
fn load_inputs(cfg: &RunConfig) -> Result<(PointTable, QuadratureMeasure)> {
    let samples_path = cfg.samples_path();
    let table = read_samples(&samples_path).with_context(|| format!("reading {}", samples_path.display()))?;
    if table.points.dim() != cfg.q {
        bail!("samples have dimension {} but q = {}", table.points.dim(), cfg.q);
    }
    let (level, mode) = match read_meta(&cfg.weights_meta_path()) {
        Some(m) => (m.level, m.mode),
        None => (cfg.weights_level(), cfg.weights_mode),
    };
    let weights_path = cfg.weights_path();
    let qm = QuadratureMeasure::read_csv(&weights_path, SERO_BOX_A, level, mode)
        .with_context(|| format!("reading {}", weights_path.display()))?;
    if qm.points.as_flat() != table.points.as_flat() {
        bail!("weights file does not match the sample points; rerun `sera weights`");
    }
    Ok((table, qm))
}

pub fn recover(cfg: &RunConfig) -> Result<()> {
    ensure_out_dir(cfg)?;
    let (table, qm) = load_inputs(cfg)?;
    let sera = Sera::new(Arc::new(qm), cfg.recovery_params())?;
    let outcome = sera.recover_detailed(&table.values)?;
    outcome.coarse.write_csv(&cfg.out_dir.join("field_n.csv"))?;
    outcome.fine.write_csv(&cfg.out_dir.join("field_N.csv"))?;
    write_with_config(&cfg.out_dir.join("spikes.json"), cfg, &outcome.spikes)?;
    println!("recover: L = {}", outcome.spikes.count);
    Ok(())
}

pub fn separate(cfg: &RunConfig) -> Result<()> {
    ensure_out_dir(cfg)?;
    let (table, qm) = load_inputs(cfg)?;
    let sera = Sera::new(Arc::new(qm), cfg.recovery_params())?;
    let result = separate_exponential_sum(&sera, &table.values)?;
    write_with_config(&cfg.out_dir.join("exponents.json"), cfg, &result)?;
    println!("separate: {} exponential(s)", result.count);
    Ok(())
}

pub fn verify(cfg: &RunConfig) -> Result<()> {
    ensure_out_dir(cfg)?;
    let opts = VerifyOptions {
        q: cfg.q,
        n: cfg.n,
        seed: cfg.seed,
        reference_spacing: if cfg.q == 1 { 0.02 } else { 0.05 },
        weights_mode: cfg.weights_mode,
        beta_hat: cfg.beta_hat,
        tolerance_scale: cfg.tolerance_scale,
        ..VerifyOptions::default()
    };
    let report = run_suite(&opts)?;
    for c in &report.checks {
        println!("{:<24} {:<4} {:.3e} <= {:.1e}", c.name, if c.pass { "PASS" } else { "FAIL" }, c.value, c.tolerance);
    }
    write_with_config(&cfg.out_dir.join("verify.json"), cfg, &report)?;
    println!("verify: {}", if report.pass { "all checks pass" } else { "some checks fail" });
    Ok(())
}
