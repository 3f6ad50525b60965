//! Hermite functions, multi-indices and the smooth cutoff `H`.
//!
//! The orthonormal Hermite functions `ψ_j(x) = h_j(x) e^{-x²/2}` are evaluated
//! with the three-term recurrence
//!
//! ```text
//! x ψ_{j-1}(x) = √(j/2) ψ_j(x) + √((j-1)/2) ψ_{j-2}(x)
//! ```
//!
//! seeded by `ψ_0(x) = π^{-1/4} e^{-x²/2}` and `ψ_1(x) = √2 x ψ_0(x)`. Every
//! iterate is `O(1)`, so the recurrence is forward-stable. For arguments far
//! outside the oscillatory region the Gaussian seed underflows long before
//! the high-degree values do, so the iteration carries a separate exponent.

use serde::{Deserialize, Serialize};

use crate::{Result, SeraError};

/// `π^{-1/4}`.
pub const PI_MINUS_QUARTER: f64 = 0.751_125_544_464_942_5;

const RESCALE_AT: f64 = 1e150;

/// Values `[ψ_0(x), …, ψ_{m_max}(x)]`.
pub fn hermite_1d_all(m_max: usize, x: f64) -> Result<Vec<f64>> {
    if !x.is_finite() {
        return Err(SeraError::domain(format!("Hermite argument must be finite, got {x}")));
    }
    let mut out = vec![0.0; m_max + 1];
    fill_hermite(x, &mut out);
    Ok(out)
}

/// Writes `ψ_0(x), …, ψ_{out.len()-1}(x)` into `out`. `x` must be finite.
pub(crate) fn fill_hermite(x: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    // ψ_j = v_j · exp(log_scale); v starts at π^{-1/4} so nothing underflows.
    let mut log_scale = -0.5 * x * x;
    let mut prev2 = PI_MINUS_QUARTER;
    out[0] = prev2 * log_scale.exp();
    if out.len() == 1 {
        return;
    }
    let mut prev1 = std::f64::consts::SQRT_2 * x * PI_MINUS_QUARTER;
    out[1] = prev1 * log_scale.exp();
    for (j, slot) in out.iter_mut().enumerate().skip(2) {
        let jf = j as f64;
        let next = (x * prev1 - ((jf - 1.0) / 2.0).sqrt() * prev2) / (jf / 2.0).sqrt();
        prev2 = prev1;
        prev1 = next;
        if prev1.abs() > RESCALE_AT {
            prev1 /= RESCALE_AT;
            prev2 /= RESCALE_AT;
            log_scale += RESCALE_AT.ln();
        }
        *slot = prev1 * log_scale.exp();
    }
}

/// A multi-index `k ∈ Z^q_+`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(entries: Vec<u32>) -> Self {
        MultiIndex(entries)
    }

    pub fn entries(&self) -> &[u32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// `|k|₁`
    pub fn one_norm(&self) -> u32 {
        self.0.iter().sum()
    }

    /// `|k|_∞`
    pub fn inf_norm(&self) -> u32 {
        self.0.iter().copied().max().unwrap_or(0)
    }
}

/// All multi-indices in `Z^q_+` with `|k|₁ ≤ max_total`, sorted by
/// `(|k|₁, lexicographic)`.
pub fn multi_indices_up_to(q: usize, max_total: u32) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    for total in 0..=max_total {
        let mut cur = vec![0u32; q];
        compositions(total, 0, &mut cur, &mut out);
    }
    out
}

// Lexicographically ascending compositions of `remaining` into cur[pos..].
fn compositions(remaining: u32, pos: usize, cur: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
    let q = cur.len();
    if pos + 1 == q {
        cur[pos] = remaining;
        out.push(MultiIndex(cur.clone()));
        return;
    }
    for v in 0..=remaining {
        cur[pos] = v;
        compositions(remaining - v, pos + 1, cur, out);
    }
}

/// `ψ_k(x) = ∏ᵢ ψ_{kᵢ}(xᵢ)`.
pub fn hermite_multi(k: &MultiIndex, x: &[f64]) -> Result<f64> {
    if k.dim() != x.len() {
        return Err(SeraError::domain(format!(
            "multi-index has dimension {} but the point has dimension {}",
            k.dim(),
            x.len()
        )));
    }
    let mut prod = 1.0;
    for (&ki, &xi) in k.entries().iter().zip(x) {
        let vals = hermite_1d_all(ki as usize, xi)?;
        prod *= vals[ki as usize];
    }
    Ok(prod)
}

/// `∫_R ψ_m(t) dt` for `m = 0..=m_max`.
///
/// Odd moments vanish. Even ones follow from integrating the generating
/// function: `∫ψ_{2p} = √2 π^{1/4} √((2p)!) / (2^p p!)`, which satisfies
/// `I_{2p} = I_{2p-2} √((2p-1)/(2p))`.
pub fn hermite_integrals(m_max: usize) -> Vec<f64> {
    let mut out = vec![0.0; m_max + 1];
    let mut cur = std::f64::consts::SQRT_2 / PI_MINUS_QUARTER;
    out[0] = cur;
    let mut m = 2;
    while m <= m_max {
        let mf = m as f64;
        cur *= ((mf - 1.0) / mf).sqrt();
        out[m] = cur;
        m += 2;
    }
    out
}

/// Smooth bump family used to interpolate between the plateaus of `H`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffShape {
    /// `g(u) = exp(-1/u)`.
    #[default]
    ExpBump,
    /// `g(u) = exp(-1/u²)`, flatter at the plateau edges.
    ExpBumpSquared,
}

impl CutoffShape {
    fn g(self, u: f64) -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        match self {
            CutoffShape::ExpBump => (-1.0 / u).exp(),
            CutoffShape::ExpBumpSquared => (-1.0 / (u * u)).exp(),
        }
    }
}

/// The cutoff `H`: `1` on `[0, lo]`, `0` on `[hi, ∞)`, smooth and
/// non-increasing in between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffSpec {
    pub transition_lo: f64,
    pub transition_hi: f64,
    pub shape: CutoffShape,
}

impl Default for CutoffSpec {
    fn default() -> Self {
        CutoffSpec { transition_lo: 0.5, transition_hi: 1.0, shape: CutoffShape::ExpBump }
    }
}

impl CutoffSpec {
    pub fn with_shape(shape: CutoffShape) -> Self {
        CutoffSpec { shape, ..Default::default() }
    }

    /// Value without argument checking; `t` must be non-negative.
    #[inline]
    pub(crate) fn value(&self, t: f64) -> f64 {
        if t <= self.transition_lo {
            return 1.0;
        }
        if t >= self.transition_hi {
            return 0.0;
        }
        let s = (t - self.transition_lo) / (self.transition_hi - self.transition_lo);
        let a = self.shape.g(1.0 - s);
        let b = self.shape.g(s);
        a / (a + b)
    }
}

/// `H(t)` for `t ≥ 0`.
pub fn cutoff_h(spec: &CutoffSpec, t: f64) -> Result<f64> {
    if t.is_nan() || t < 0.0 {
        return Err(SeraError::domain(format!("cutoff argument must be non-negative, got {t}")));
    }
    Ok(spec.value(t))
}
