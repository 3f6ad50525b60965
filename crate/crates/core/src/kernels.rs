//! The localized kernels
//!
//! ```text
//! Φ_n(x, y)  = n^{-q} Σ_j H(√|j|₁/n) ψ_j(x) ψ_j(y)
//! Φ*_n(x, y) = (2/(n²π))^{q/2} Σ_j H(√|j|₁/n) 3^{|j|₁/2} ψ_j(x) ψ_j(2y/√3)
//! ```
//!
//! Both sums depend on `j` only through the layer `m = |j|₁`, so they are
//! evaluated layer by layer: per coordinate form `p_m = ψ_m(xᵢ)ψ_m(yᵢ)`, take
//! the `q`-fold truncated convolution of those sequences to get
//! `P_m = Σ_{|j|₁=m} ψ_j(x)ψ_j(y)`, then weight each layer.

use serde::{Deserialize, Serialize};

use crate::special::{fill_hermite, CutoffSpec};
use crate::{Result, SeraError};

pub(crate) const TWO_OVER_SQRT3: f64 = 1.154_700_538_379_251_5;

/// Parameters of `Φ_n` and `Φ*_n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub n: f64,
    pub q: usize,
    /// Localization exponent `S > q` used when estimating kernel constants.
    pub s: u32,
    pub cutoff: CutoffSpec,
}

impl KernelSpec {
    /// Kernel with `S = q + 2` and the default cutoff.
    pub fn new(n: f64, q: usize) -> Result<Self> {
        Self::with_params(n, q, q as u32 + 2, CutoffSpec::default())
    }

    pub fn with_params(n: f64, q: usize, s: u32, cutoff: CutoffSpec) -> Result<Self> {
        if !(n.is_finite() && n > 0.0) {
            return Err(SeraError::domain(format!("kernel parameter n must be positive, got {n}")));
        }
        if q == 0 {
            return Err(SeraError::domain("dimension q must be at least 1"));
        }
        if (s as usize) <= q {
            return Err(SeraError::domain(format!("localization exponent S={s} must exceed q={q}")));
        }
        Ok(KernelSpec { n, q, s, cutoff })
    }

    /// Same kernel at another resolution level.
    pub fn at_level(&self, n: f64) -> Result<Self> {
        Self::with_params(n, self.q, self.s, self.cutoff)
    }

    /// Number of layers `m` with `m < n²`, i.e. `⌈n²⌉`.
    pub fn degree_cap(&self) -> usize {
        ((self.n * self.n).ceil() as usize).max(1)
    }

    fn cutoff_layers(&self) -> Vec<f64> {
        (0..self.degree_cap()).map(|m| self.cutoff.value((m as f64).sqrt() / self.n)).collect()
    }

    /// Layer weights of `Φ_n`: `n^{-q} H(√m/n)`.
    pub fn phi_weights(&self) -> Vec<f64> {
        let norm = self.n.powi(-(self.q as i32));
        self.cutoff_layers().into_iter().map(|h| h * norm).collect()
    }

    /// Layer weights of `Φ*_n`: `(2/(n²π))^{q/2} H(√m/n) 3^{m/2}`.
    pub fn phi_star_weights(&self) -> Vec<f64> {
        let norm = (2.0 / (self.n * self.n * std::f64::consts::PI)).powf(self.q as f64 / 2.0);
        self.cutoff_layers().into_iter().enumerate().map(|(m, h)| norm * h * 3f64.powf(m as f64 / 2.0)).collect()
    }

    /// `max_m H(√m/n) 3^{m/2}`: how much `Φ*_n` magnifies rounding errors in
    /// data integrated against it.
    pub fn phi_star_amplification(&self) -> f64 {
        self.cutoff_layers().into_iter().enumerate().map(|(m, h)| h * 3f64.powf(m as f64 / 2.0)).fold(0.0, f64::max)
    }
}

/// `ψ_m(xᵢ)` for `m < degrees` and every coordinate of one point.
#[derive(Debug, Clone)]
pub struct HermiteTable {
    degrees: usize,
    values: Vec<f64>,
}

impl HermiteTable {
    /// Table of `ψ_m(scale · xᵢ)`.
    pub fn new(x: &[f64], degrees: usize, scale: f64) -> Self {
        let mut values = vec![0.0; x.len() * degrees];
        for (i, &xi) in x.iter().enumerate() {
            fill_hermite(scale * xi, &mut values[i * degrees..(i + 1) * degrees]);
        }
        HermiteTable { degrees, values }
    }

    pub fn dim(&self) -> usize {
        self.values.len() / self.degrees.max(1)
    }

    #[inline]
    pub fn coord(&self, i: usize) -> &[f64] {
        &self.values[i * self.degrees..(i + 1) * self.degrees]
    }
}

/// `Σ_m w_m P_m` with `P_m = Σ_{|j|₁=m} ∏ᵢ a_i[jᵢ] b_i[jᵢ]`.
pub(crate) fn layered_sum(a: &HermiteTable, b: &HermiteTable, weights: &[f64]) -> f64 {
    let k = weights.len();
    debug_assert!(a.degrees >= k && b.degrees >= k);
    let q = a.dim();
    if q == 1 {
        let (ra, rb) = (a.coord(0), b.coord(0));
        return (0..k).map(|m| weights[m] * ra[m] * rb[m]).sum();
    }
    let mut acc: Vec<f64> = (0..k).map(|m| a.coord(0)[m] * b.coord(0)[m]).collect();
    let mut next = vec![0.0; k];
    for i in 1..q {
        let (ra, rb) = (a.coord(i), b.coord(i));
        let p: Vec<f64> = (0..k).map(|m| ra[m] * rb[m]).collect();
        for (m, slot) in next.iter_mut().enumerate() {
            let mut s = 0.0;
            for t in 0..=m {
                s += acc[t] * p[m - t];
            }
            *slot = s;
        }
        std::mem::swap(&mut acc, &mut next);
    }
    acc.iter().zip(weights).map(|(p, w)| p * w).sum()
}

fn check_dims(q: usize, x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != q || y.len() != q {
        return Err(SeraError::domain(format!(
            "kernel of dimension {q} evaluated at points of dimension {} and {}",
            x.len(),
            y.len()
        )));
    }
    Ok(())
}

/// `Φ_n(x, y)`.
pub fn phi_n(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    check_dims(spec.q, x, y)?;
    let k = spec.degree_cap();
    let (tx, ty) = (HermiteTable::new(x, k, 1.0), HermiteTable::new(y, k, 1.0));
    Ok(layered_sum(&tx, &ty, &spec.phi_weights()))
}

/// `Φ*_n(x, y)`; not symmetric in its arguments.
pub fn phi_n_star(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    check_dims(spec.q, x, y)?;
    let k = spec.degree_cap();
    let tx = HermiteTable::new(x, k, 1.0);
    let ty = HermiteTable::new(y, k, TWO_OVER_SQRT3);
    Ok(layered_sum(&tx, &ty, &spec.phi_star_weights()))
}

/// `Φ_n(x, x)`.
pub fn phi_diag(spec: &KernelSpec, x: &[f64]) -> Result<f64> {
    phi_n(spec, x, x)
}

/// Evaluates `Φ_n` repeatedly without recomputing the layer weights.
#[derive(Debug, Clone)]
pub struct PhiEvaluator {
    spec: KernelSpec,
    weights: Vec<f64>,
}

impl PhiEvaluator {
    pub fn new(spec: KernelSpec) -> Self {
        PhiEvaluator { weights: spec.phi_weights(), spec }
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn table(&self, x: &[f64]) -> HermiteTable {
        HermiteTable::new(x, self.weights.len(), 1.0)
    }

    pub fn eval_tables(&self, a: &HermiteTable, b: &HermiteTable) -> f64 {
        layered_sum(a, b, &self.weights)
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        self.eval_tables(&self.table(x), &self.table(y))
    }
}

/// Closed form of `Σ_j ψ_j(y) ψ_j(z) r^{|j|₁}`.
pub fn mehler_closed_form(q: usize, r: f64, y: &[f64], z: &[f64]) -> Result<f64> {
    check_dims(q, y, z)?;
    if !(r.abs() < 1.0) {
        return Err(SeraError::domain(format!("Mehler parameter must satisfy |r| < 1, got {r}")));
    }
    let yz: f64 = y.iter().zip(z).map(|(a, b)| a * b).sum();
    let ss: f64 = y.iter().chain(z).map(|a| a * a).sum();
    let one_m = 1.0 - r * r;
    let pref = (std::f64::consts::PI * one_m).powf(-(q as f64) / 2.0);
    Ok(pref * ((2.0 * yz * r - ss * r * r) / one_m).exp() * (-ss / 2.0).exp())
}

/// The Mehler sum at `r = 1/√3`: `(3/(2π))^{q/2} exp(-|y - (√3/2)z|²) exp(-|z|²/4)`.
pub fn mehler_special(q: usize, y: &[f64], z: &[f64]) -> Result<f64> {
    check_dims(q, y, z)?;
    let c = 3f64.sqrt() / 2.0;
    let d: f64 = y.iter().zip(z).map(|(a, b)| (a - c * b).powi(2)).sum();
    let zz: f64 = z.iter().map(|a| a * a).sum();
    Ok((3.0 / (2.0 * std::f64::consts::PI)).powf(q as f64 / 2.0) * (-d).exp() * (-zz / 4.0).exp())
}

/// Uniform 1D lattice `lo, lo + h, …, hi`, used as a tensor-product
/// trapezoid grid for reference integrals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceGrid {
    pub lo: f64,
    pub hi: f64,
    pub spacing: f64,
}

/// Coarsest reference spacing accepted by the integral oracles.
pub const MAX_REFERENCE_SPACING: f64 = 0.05;

impl ReferenceGrid {
    pub fn symmetric(half_width: f64, spacing: f64) -> Self {
        ReferenceGrid { lo: -half_width, hi: half_width, spacing }
    }

    /// Grid that satisfies the coverage requirement of the oracles at level `n`.
    pub fn for_level(n: f64, spacing: f64) -> Self {
        Self::symmetric(3.0 * 3f64.sqrt() * n / 2.0 + 10.0, spacing)
    }

    pub fn validate(&self, required_half_width: f64) -> Result<()> {
        if !(self.spacing > 0.0) || self.spacing > MAX_REFERENCE_SPACING {
            return Err(SeraError::config(format!(
                "reference grid spacing {} exceeds {MAX_REFERENCE_SPACING}",
                self.spacing
            )));
        }
        if self.lo > -required_half_width || self.hi < required_half_width {
            return Err(SeraError::config(format!(
                "reference grid [{}, {}] does not cover [-{r}, {r}]",
                self.lo,
                self.hi,
                r = required_half_width
            )));
        }
        Ok(())
    }

    /// Nodes and trapezoid weights.
    pub fn nodes(&self) -> (Vec<f64>, Vec<f64>) {
        let count = ((self.hi - self.lo) / self.spacing).round() as usize;
        let h = (self.hi - self.lo) / count as f64;
        let xs: Vec<f64> = (0..=count).map(|i| self.lo + i as f64 * h).collect();
        let mut ws = vec![h; count + 1];
        ws[0] = h / 2.0;
        ws[count] = h / 2.0;
        (xs, ws)
    }
}

/// `|Φ_n(x,y) − ∫ exp(-|y−u|²) Φ*_n(x,u) exp(-|u|²/3) du|` with the integral
/// taken by the tensor trapezoid rule on `grid`.
///
/// The integrand is a layered sum of separable terms, so the product-grid
/// trapezoid sum reduces exactly to per-coordinate 1D sums.
pub fn gauss_identity_residual(spec: &KernelSpec, x: &[f64], y: &[f64], grid: &ReferenceGrid) -> Result<f64> {
    check_dims(spec.q, x, y)?;
    grid.validate(3.0 * 3f64.sqrt() * spec.n / 2.0 + 10.0)?;
    let k = spec.degree_cap();
    let (us, ws) = grid.nodes();
    // moments[i][m] = Σ_u w_u exp(-(yᵢ-u)²) exp(-u²/3) ψ_m(2u/√3)
    let mut moments = vec![0.0; spec.q * k];
    let mut buf = vec![0.0; k];
    for (&u, &w) in us.iter().zip(&ws) {
        fill_hermite(TWO_OVER_SQRT3 * u, &mut buf);
        let g = (-u * u / 3.0).exp();
        for (i, &yi) in y.iter().enumerate() {
            let f = w * g * (-(yi - u) * (yi - u)).exp();
            for (mv, b) in moments[i * k..(i + 1) * k].iter_mut().zip(&buf) {
                *mv += f * b;
            }
        }
    }
    let tx = HermiteTable::new(x, k, 1.0);
    let tm = HermiteTable { degrees: k, values: moments };
    let integral = layered_sum(&tx, &tm, &spec.phi_star_weights());
    Ok((phi_n(spec, x, y)? - integral).abs())
}
