//! Ground-truth targets, sample geometries and synthetic data.
//!
//! Targets live in the scaled coordinates `x` in which the data read
//! `𝔾(x) = Σ a_ℓ exp(-|x - x_ℓ|²)`. A blur scale `v` relates them to the
//! observation coordinates `y = 2v·x`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::points::{euclid_dist, sq_dist, sq_norm};
use crate::quadrature::{solve_weights, QuadratureMeasure, SampleSet, WeightsMode, WeightsOptions, DEFAULT_BETA_HAT};
use crate::{Points, Result, SeraError};

/// Attempts per centre before rejection sampling gives up.
const PLACEMENT_BUDGET: usize = 100_000;

/// Consecutive rejections after which placement restarts from scratch.
const RESTART_AFTER: usize = 1_000;

/// A signed atomic measure `Σ a_ℓ δ_{x_ℓ}` with its summary constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub centers: Vec<Vec<f64>>,
    pub amplitudes: Vec<f64>,
    pub scale_v: f64,
    /// Smallest pairwise Euclidean distance; `None` for fewer than two centres.
    pub separation: Option<f64>,
    /// `min |a_ℓ|`.
    pub min_amp: f64,
    /// `Σ |a_ℓ|`.
    pub mass: f64,
    /// `max |x_ℓ|_∞`.
    pub box_radius: f64,
}

impl TargetSpec {
    pub fn new(centers: Vec<Vec<f64>>, amplitudes: Vec<f64>, scale_v: f64) -> Result<Self> {
        if centers.len() != amplitudes.len() {
            return Err(SeraError::domain(format!("{} centres but {} amplitudes", centers.len(), amplitudes.len())));
        }
        if !(scale_v > 0.0 && scale_v.is_finite()) {
            return Err(SeraError::domain(format!("scale v must be positive, got {scale_v}")));
        }
        if let Some(first) = centers.first() {
            let q = first.len();
            if q == 0 || centers.iter().any(|c| c.len() != q || c.iter().any(|v| !v.is_finite())) {
                return Err(SeraError::domain("centres must be finite vectors of one common positive dimension"));
            }
        }
        if amplitudes.iter().any(|a| *a == 0.0 || !a.is_finite()) {
            return Err(SeraError::domain("amplitudes must be finite and nonzero"));
        }
        let mut separation: Option<f64> = None;
        for i in 0..centers.len() {
            for j in i + 1..centers.len() {
                let d = euclid_dist(&centers[i], &centers[j]);
                separation = Some(separation.map_or(d, |s| s.min(d)));
            }
        }
        let min_amp = amplitudes.iter().map(|a| a.abs()).fold(f64::INFINITY, f64::min);
        let mass = amplitudes.iter().map(|a| a.abs()).sum();
        let box_radius = centers.iter().flatten().fold(0.0f64, |m, c| m.max(c.abs()));
        Ok(TargetSpec {
            centers,
            amplitudes,
            scale_v,
            separation,
            min_amp: if min_amp.is_finite() { min_amp } else { 0.0 },
            mass,
            box_radius,
        })
    }

    pub fn count(&self) -> usize {
        self.centers.len()
    }

    pub fn dim(&self) -> Option<usize> {
        self.centers.first().map(Vec::len)
    }

    /// Centres in observation coordinates, `y_ℓ = 2v·x_ℓ`.
    pub fn original_centers(&self) -> Vec<Vec<f64>> {
        self.centers.iter().map(|c| c.iter().map(|v| 2.0 * self.scale_v * v).collect()).collect()
    }
}

/// Draws `count` centres in `[-box_radius, box_radius]^q` at pairwise
/// Euclidean distance at least `eta_min`, with `|a|` uniform in `amp_range`
/// and random signs.
pub fn gen_target(
    seed: u64,
    count: usize,
    q: usize,
    box_radius: f64,
    eta_min: f64,
    amp_range: (f64, f64),
) -> Result<TargetSpec> {
    let (lo, hi) = amp_range;
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(SeraError::domain(format!("amplitude range must satisfy 0 < lo ≤ hi, got ({lo}, {hi})")));
    }
    if q == 0 || !(box_radius >= 0.0) || !(eta_min >= 0.0) {
        return Err(SeraError::domain("dimension must be positive and radii non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut attempts = 0;
    let mut stalled = 0;
    while centers.len() < count {
        attempts += 1;
        if attempts > PLACEMENT_BUDGET * count.max(1) {
            return Err(SeraError::domain(format!(
                "could not place {count} centres at separation {eta_min} in [-{box_radius}, {box_radius}]^{q}"
            )));
        }
        let c: Vec<f64> =
            (0..q).map(|_| if box_radius > 0.0 { rng.gen_range(-box_radius..=box_radius) } else { 0.0 }).collect();
        if centers.iter().all(|o| euclid_dist(o, &c) >= eta_min) {
            centers.push(c);
            stalled = 0;
        } else {
            stalled += 1;
            // Earlier centres may leave no room; start the configuration over.
            if stalled >= RESTART_AFTER {
                centers.clear();
                stalled = 0;
            }
        }
    }
    let amplitudes = (0..count)
        .map(|_| {
            let m = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    TargetSpec::new(centers, amplitudes, 0.5)
}

/// Perturbation measure `τ_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClutterSpec {
    /// `Σ c_j δ_{u_j}`.
    Atomic { positions: Vec<Vec<f64>>, masses: Vec<f64> },
    /// Density constant on the cells of a uniform tensor grid starting at
    /// `origin` with side `cell` and `cells` cells per axis (row-major).
    PiecewiseConstant { origin: Vec<f64>, cell: f64, cells: usize, density: Vec<f64> },
}

impl ClutterSpec {
    /// Total variation `‖τ_c‖`.
    pub fn bv_norm(&self) -> f64 {
        match self {
            ClutterSpec::Atomic { masses, .. } => masses.iter().map(|c| c.abs()).sum(),
            ClutterSpec::PiecewiseConstant { origin, cell, density, .. } => {
                density.iter().map(|c| c.abs()).sum::<f64>() * cell.powi(origin.len() as i32)
            }
        }
    }

    /// Atomic clutter with `count` atoms in `[-radius, radius]^q`, random
    /// signs, and total variation exactly `bv_norm`.
    pub fn random_atomic(seed: u64, count: usize, q: usize, radius: f64, bv_norm: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let positions: Vec<Vec<f64>> =
            (0..count).map(|_| (0..q).map(|_| rng.gen_range(-radius..=radius)).collect()).collect();
        let raw: Vec<f64> =
            (0..count).map(|_| rng.gen_range(0.1..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let total: f64 = raw.iter().map(|c: &f64| c.abs()).sum();
        let masses = raw.iter().map(|c| c * bv_norm / total.max(f64::MIN_POSITIVE)).collect();
        ClutterSpec::Atomic { positions, masses }
    }

    /// `ℰ(x) = ∫ exp(-|x - u|²) dτ_c(u)`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            ClutterSpec::Atomic { positions, masses } => {
                positions.iter().zip(masses).map(|(u, c)| c * (-sq_dist(x, u)).exp()).sum()
            }
            ClutterSpec::PiecewiseConstant { origin, cell, cells, density } => {
                let q = origin.len();
                // ∫_a^b exp(-(t-u)²) du = (√π/2)(erf(t-a) - erf(t-b)), per axis.
                let half_sqrt_pi = std::f64::consts::PI.sqrt() / 2.0;
                let axis: Vec<Vec<f64>> = (0..q)
                    .map(|d| {
                        (0..*cells)
                            .map(|k| {
                                let a = origin[d] + k as f64 * cell;
                                half_sqrt_pi * (libm::erf(x[d] - a) - libm::erf(x[d] - a - cell))
                            })
                            .collect()
                    })
                    .collect();
                density
                    .iter()
                    .enumerate()
                    .map(|(lin, c)| {
                        let mut r = lin;
                        let mut p = *c;
                        for d in (0..q).rev() {
                            p *= axis[d][r % cells];
                            r /= cells;
                        }
                        p
                    })
                    .sum()
            }
        }
    }
}

/// `𝔾(x) = Σ a_ℓ exp(-|x - x_ℓ|²) + ℰ(x)`.
pub fn eval_blurred(target: &TargetSpec, clutter: Option<&ClutterSpec>, points: &Points) -> Vec<f64> {
    points
        .iter()
        .map(|x| {
            let s: f64 = target.centers.iter().zip(&target.amplitudes).map(|(c, a)| a * (-sq_dist(x, c)).exp()).sum();
            s + clutter.map_or(0.0, |c| c.eval(x))
        })
        .collect()
}

/// `G(y, v) = Σ a_ℓ (4πv²)^{-q/2} exp(-|y - y_ℓ|²/(4v²))` with `y_ℓ = 2v·x_ℓ`.
pub fn eval_model_g(target: &TargetSpec, points: &Points) -> Result<Vec<f64>> {
    let v = target.scale_v;
    if !(v > 0.0) {
        return Err(SeraError::domain(format!("scale v must be positive, got {v}")));
    }
    Ok(gaussian_pixels(&target.original_centers(), &target.amplitudes, v, points))
}

/// `F_{v0}(y) = Σ a_ℓ g_{v0}(y - y_ℓ)` with the normalized Gaussian
/// `g_v(y) = (4πv²)^{-q/2} exp(-|y|²/(4v²))`, centred at `y_ℓ = 2v·x_ℓ`.
pub fn eval_extended_source(target: &TargetSpec, v0: f64, points: &Points) -> Result<Vec<f64>> {
    if !(v0 > 0.0 && v0.is_finite()) {
        return Err(SeraError::domain(format!("pixel scale v0 must be positive, got {v0}")));
    }
    Ok(gaussian_pixels(&target.original_centers(), &target.amplitudes, v0, points))
}

fn gaussian_pixels(centers: &[Vec<f64>], amplitudes: &[f64], v: f64, points: &Points) -> Vec<f64> {
    let q = points.dim() as f64;
    let norm = (4.0 * std::f64::consts::PI * v * v).powf(-q / 2.0);
    points
        .iter()
        .map(|y| centers.iter().zip(amplitudes).map(|(c, a)| a * norm * (-sq_dist(y, c) / (4.0 * v * v)).exp()).sum())
        .collect()
}

/// `f(y) = Σ b_ℓ exp(2 y_ℓ·y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpSum {
    pub exponents: Vec<Vec<f64>>,
    pub coefficients: Vec<f64>,
}

impl ExpSum {
    pub fn new(exponents: Vec<Vec<f64>>, coefficients: Vec<f64>) -> Result<Self> {
        if exponents.len() != coefficients.len() {
            return Err(SeraError::domain(format!(
                "{} exponents but {} coefficients",
                exponents.len(),
                coefficients.len()
            )));
        }
        Ok(ExpSum { exponents, coefficients })
    }

    /// The equivalent blurred target at `v = 1/2`:
    /// `a_ℓ = π^{q/2} exp(|y_ℓ|²) b_ℓ`, centres `y_ℓ`.
    pub fn as_target(&self) -> Result<TargetSpec> {
        let amplitudes = self
            .exponents
            .iter()
            .zip(&self.coefficients)
            .map(|(y, b)| std::f64::consts::PI.powf(y.len() as f64 / 2.0) * sq_norm(y).exp() * b)
            .collect();
        TargetSpec::new(self.exponents.clone(), amplitudes, 0.5)
    }
}

/// Values of an exponential sum; fails on overflow, naming the point.
pub fn eval_exp_sum(sum: &ExpSum, points: &Points) -> Result<Vec<f64>> {
    points
        .iter()
        .enumerate()
        .map(|(i, y)| {
            let v: f64 = sum
                .exponents
                .iter()
                .zip(&sum.coefficients)
                .map(|(e, b)| b * (2.0 * crate::points::dot(e, y)).exp())
                .sum();
            if v.is_finite() {
                Ok(v)
            } else {
                Err(SeraError::domain(format!("exponential sum overflows at point {i} = {y:?}")))
            }
        })
        .collect()
}

/// Jittered lattice over `[-3n/A, 3n/A]^q` with fill distance at most
/// `density_factor · β/(nA)`.
///
/// Lattice spacing `h` and per-coordinate jitter uniform in `±jitter·h`
/// (`jitter ≤ 1/4`) give a fill distance of at most `h(1/2 + jitter)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleGeometry {
    pub q: usize,
    pub a: f64,
    pub n: f64,
    pub density_factor: f64,
    pub beta_hat: f64,
    pub jitter: f64,
    pub seed: u64,
}

impl SampleGeometry {
    pub fn new(q: usize, a: f64, n: f64, density_factor: f64) -> Self {
        SampleGeometry { q, a, n, density_factor, beta_hat: DEFAULT_BETA_HAT, jitter: 0.25, seed: 0 }
    }

    /// Target fill distance `density_factor · β/(nA)`.
    pub fn target_mesh_norm(&self) -> f64 {
        self.density_factor * self.beta_hat / (self.n * self.a)
    }
}

pub fn gen_sample_points(geom: &SampleGeometry) -> Result<SampleSet> {
    let SampleGeometry { q, a, n, density_factor, beta_hat, jitter, seed } = *geom;
    if !(density_factor > 0.0 && density_factor <= 1.0) {
        return Err(SeraError::domain(format!("density factor must lie in (0, 1], got {density_factor}")));
    }
    if !(0.0..=0.25).contains(&jitter) {
        return Err(SeraError::domain(format!("jitter must lie in [0, 1/4], got {jitter}")));
    }
    if q == 0 || !(a > 0.0 && n > 0.0 && beta_hat > 0.0) {
        return Err(SeraError::domain("q, A, n and β must be positive"));
    }
    let half = 3.0 * n / a;
    let target = geom.target_mesh_norm();
    let per_axis = ((2.0 * half * (0.5 + jitter) / target).ceil() as usize).max(1);
    let h = 2.0 * half / per_axis as f64;
    let axis: Vec<f64> = (0..=per_axis).map(|i| -half + i as f64 * h).collect();
    let m = axis.len();
    let total = m.pow(q as u32);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(total * q);
    for code in 0..total {
        let mut c = code;
        let mut p = vec![0.0; q];
        for slot in p.iter_mut().rev() {
            *slot = axis[c % m];
            c /= m;
        }
        for slot in p.iter_mut() {
            if jitter > 0.0 {
                *slot = (*slot + rng.gen_range(-jitter..=jitter) * h).clamp(-half, half);
            }
        }
        data.extend_from_slice(&p);
    }
    SampleSet::new(Points::new(q, data)?, a, n)
}

/// Jittered-lattice samples for `geom` and their quadrature weights with
/// degree budget `⌊2n²⌋`.
pub fn lattice_quadrature(geom: &SampleGeometry, mode: WeightsMode) -> Result<QuadratureMeasure> {
    let samples = gen_sample_points(geom)?;
    let options = WeightsOptions { mode, beta_hat: geom.beta_hat, ..WeightsOptions::default() };
    solve_weights(&samples, &options)
}

/// I.i.d. noise uniform in `[-amplitude, amplitude]`, outside the clutter
/// model.
pub fn add_observation_noise(values: &mut [f64], amplitude: f64, seed: u64) {
    if amplitude <= 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in values.iter_mut() {
        *v += rng.gen_range(-amplitude..=amplitude);
    }
}
