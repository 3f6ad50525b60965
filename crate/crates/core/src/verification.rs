//! Oracle suite: independent numerical checks of the kernel and quadrature
//! identities the recovery relies on. Failures are report entries, not errors.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::kernels::{gauss_identity_residual, mehler_closed_form, mehler_special, KernelSpec, ReferenceGrid};
use crate::quadrature::{product_orthogonality_residual, WeightsMode};
use crate::sero::{assemble_operator, build_grid, continuous_sero_oracle};
use crate::special::hermite_1d_all;
use crate::synthesis::{lattice_quadrature, SampleGeometry};
use crate::{Result, SeraError, SERO_BOX_A};

/// Terms kept in the truncated Mehler series.
pub const MEHLER_TERMS: usize = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyOptions {
    pub q: usize,
    pub n: f64,
    pub seed: u64,
    /// Random `(x, y)` pairs per pointwise check.
    pub pairs: usize,
    /// Trapezoid spacing of the reference integrals.
    pub reference_spacing: f64,
    pub weights_mode: WeightsMode,
    pub beta_hat: f64,
    pub tolerance_scale: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            q: 1,
            n: 3.0,
            seed: 0,
            pairs: 20,
            reference_spacing: 0.02,
            weights_mode: WeightsMode::MomentExact,
            beta_hat: 0.5,
            tolerance_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, value: f64, tolerance: f64, detail: String) -> Self {
        CheckResult { name: name.into(), value, tolerance, pass: value <= tolerance, detail }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub options: VerifyOptions,
    pub checks: Vec<CheckResult>,
    pub pass: bool,
}

/// `max_{j,k ≤ degree} |Σ h ψ_j ψ_k − δ_{jk}|` with the trapezoid rule on
/// `[-half, half]`.
pub fn hermite_orthonormality_residual(degree: usize, half: f64, spacing: f64) -> Result<f64> {
    let (xs, ws) = ReferenceGrid::symmetric(half, spacing).nodes();
    let mut gram = vec![0.0; (degree + 1) * (degree + 1)];
    for (&x, &w) in xs.iter().zip(&ws) {
        let psi = hermite_1d_all(degree, x)?;
        for j in 0..=degree {
            for k in 0..=degree {
                gram[j * (degree + 1) + k] += w * psi[j] * psi[k];
            }
        }
    }
    Ok(gram
        .iter()
        .enumerate()
        .map(|(i, g)| (g - if i / (degree + 1) == i % (degree + 1) { 1.0 } else { 0.0 }).abs())
        .fold(0.0, f64::max))
}

/// `Σ_{j<terms} r^j ψ_j(y) ψ_j(z)` in one dimension.
pub fn mehler_series_1d(r: f64, y: f64, z: f64, terms: usize) -> Result<f64> {
    let hy = hermite_1d_all(terms - 1, y)?;
    let hz = hermite_1d_all(terms - 1, z)?;
    let mut rk = 1.0;
    let mut s = 0.0;
    for (a, b) in hy.iter().zip(&hz) {
        s += rk * a * b;
        rk *= r;
    }
    Ok(s)
}

fn random_point(rng: &mut ChaCha8Rng, q: usize, half: f64) -> Vec<f64> {
    (0..q).map(|_| rng.gen_range(-half..=half)).collect()
}

fn check_mehler(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> Result<[CheckResult; 2]> {
    let r_special = 1.0 / 3f64.sqrt();
    let mut series_gap = 0.0f64;
    let mut special_gap = 0.0f64;
    for _ in 0..opts.pairs.max(1) * 5 {
        let y = rng.gen_range(-2.0..=2.0);
        let z = rng.gen_range(-2.0..=2.0);
        for r in [0.5, r_special] {
            let s = mehler_series_1d(r, y, z, MEHLER_TERMS)?;
            series_gap = series_gap.max((s - mehler_closed_form(1, r, &[y], &[z])?).abs());
        }
        series_gap =
            series_gap.max((mehler_series_1d(r_special, y, z, MEHLER_TERMS)? - mehler_special(1, &[y], &[z])?).abs());
        let yq = random_point(rng, opts.q, 2.0);
        let zq = random_point(rng, opts.q, 2.0);
        special_gap = special_gap
            .max((mehler_closed_form(opts.q, r_special, &yq, &zq)? - mehler_special(opts.q, &yq, &zq)?).abs());
    }
    let t = opts.tolerance_scale;
    Ok([
        CheckResult::new(
            "mehler_series",
            series_gap,
            1e-10 * t,
            format!("{MEHLER_TERMS}-term series vs closed forms, q=1, |y|,|z| <= 2"),
        ),
        CheckResult::new(
            "mehler_special",
            special_gap,
            1e-12 * t,
            format!("closed form at r=1/sqrt(3) vs special form, q={}", opts.q),
        ),
    ])
}

fn check_bridge(opts: &VerifyOptions, spec: &KernelSpec, rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let grid = ReferenceGrid::for_level(opts.n, opts.reference_spacing);
    let mut worst = 0.0f64;
    for _ in 0..opts.pairs {
        let x = random_point(rng, opts.q, 2.0);
        let y = random_point(rng, opts.q, 2.0);
        worst = worst.max(gauss_identity_residual(spec, &x, &y, &grid)?);
    }
    Ok(CheckResult::new(
        "bridge_identity",
        worst,
        1e-6 * opts.tolerance_scale,
        format!("{} pairs, reference spacing {}", opts.pairs, opts.reference_spacing),
    ))
}

/// Runs every check. Fails only on invalid options.
pub fn run_suite(opts: &VerifyOptions) -> Result<VerificationReport> {
    if opts.q == 0 || opts.pairs == 0 || !(opts.tolerance_scale > 0.0) {
        return Err(SeraError::Domain("verification needs q >= 1, pairs >= 1 and a positive tolerance scale".into()));
    }
    let spec = KernelSpec::new(opts.n, opts.q)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let t = opts.tolerance_scale;
    let mut checks = Vec::new();

    checks.push(CheckResult::new(
        "hermite_orthonormality",
        hermite_orthonormality_residual(30, 20.0, 0.01)?,
        1e-8 * t,
        "degrees 0..=30, trapezoid on [-20, 20] with spacing 0.01".into(),
    ));
    checks.extend(check_mehler(opts, &mut rng)?);
    checks.push(check_bridge(opts, &spec, &mut rng)?);

    let geom = SampleGeometry {
        seed: opts.seed,
        beta_hat: opts.beta_hat,
        ..SampleGeometry::new(opts.q, SERO_BOX_A, opts.n, 1.0)
    };
    let qm = lattice_quadrature(&geom, opts.weights_mode)?;
    let degree = (qm.degree_budget / 2) as usize;
    checks.push(CheckResult::new(
        "product_orthogonality",
        product_orthogonality_residual(&qm, degree)?,
        1e-6 * t,
        format!("{} samples, total degree <= {degree}", qm.len()),
    ));

    // Single spike at x1: data exp(-|y - x1|²), compared against the
    // continuous operator at grid points.
    let x1 = random_point(&mut rng, opts.q, 1.0);
    let data: Vec<f64> = qm.points.iter().map(|y| (-crate::points::sq_dist(y, &x1)).exp()).collect();
    let grid = Arc::new(build_grid(opts.n, opts.q, 0.1)?);
    let field = assemble_operator(&qm, Arc::clone(&grid), &spec)?.apply(&data)?;
    let reference = ReferenceGrid::for_level(opts.n, opts.reference_spacing);
    let mut gap = 0.0f64;
    for _ in 0..opts.pairs {
        let i = rng.gen_range(0..grid.len());
        let x = field.point(i);
        let exact = continuous_sero_oracle(&spec, |u| (-crate::points::sq_dist(u, &x1)).exp(), x, &reference)?;
        gap = gap.max((field.values[i] - exact).abs());
    }
    checks.push(CheckResult::new(
        "operator_gap",
        gap,
        1e-4 * t,
        format!("{} grid points, single spike at {x1:?}", opts.pairs),
    ));

    let pass = checks.iter().all(|c| c.pass);
    Ok(VerificationReport { options: opts.clone(), checks, pass })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_matches_closed_form_at_origin() {
        let s = mehler_series_1d(1.0 / 3f64.sqrt(), 0.0, 0.0, MEHLER_TERMS).unwrap();
        assert!((s - (3.0 / (2.0 * std::f64::consts::PI)).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn orthonormality_degrades_on_a_coarse_grid() {
        assert!(hermite_orthonormality_residual(10, 20.0, 0.01).unwrap() < 1e-12);
        assert!(hermite_orthonormality_residual(10, 3.0, 0.01).unwrap() > 1e-3);
    }

    #[test]
    fn suite_passes_by_default_and_fails_when_tightened() {
        let report = run_suite(&VerifyOptions { pairs: 5, ..VerifyOptions::default() }).unwrap();
        assert!(report.pass, "{report:#?}");
        assert_eq!(report.checks.len(), 6);
        let strict =
            run_suite(&VerifyOptions { pairs: 5, tolerance_scale: 1e-12, ..VerifyOptions::default() }).unwrap();
        assert!(!strict.pass);
        assert_eq!(
            serde_json::to_string(&strict).unwrap(),
            serde_json::to_string(
                &run_suite(&VerifyOptions { pairs: 5, tolerance_scale: 1e-12, ..VerifyOptions::default() }).unwrap()
            )
            .unwrap()
        );
    }
}
