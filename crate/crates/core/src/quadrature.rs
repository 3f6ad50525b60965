//! Quadrature weights on scattered points.
//!
//! Given points `𝒞 ⊂ [-3n/A, 3n/A]^q`, the weights solve
//!
//! ```text
//! Σ_y w_y ψ_k(√2·A·y) = rhs_k,   |k|₁ ≤ 2n²
//! ```
//!
//! in the minimum-norm least-squares sense. Because `ψ_k(√2·A·y)` is a
//! polynomial of degree `|k|₁` times `exp(-A²|y|²)`, weights that reproduce the
//! true Gaussian moments integrate every such product exactly. At `A = 2/√3`
//! this is the product orthogonality of `ψ_k(2y/√3)` that the discrete
//! recovery operator relies on.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::io::PointTable;
use crate::linalg::min_norm_lstsq;
use crate::points::{lex_cmp, sup_dist};
use crate::special::{fill_hermite, hermite_integrals, multi_indices_up_to, MultiIndex};
use crate::{Points, Result, SeraError, SERO_BOX_A};

/// Default for the unspecified mesh constant `β` in `δ ≤ β/(nA)`.
pub const DEFAULT_BETA_HAT: f64 = 0.25;

/// Relative threshold on the pivoted diagonal for rank decisions.
pub const RANK_RTOL: f64 = 1e-10;

/// Scattered points inside the box `[-3n/A, 3n/A]^q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    points: Points,
    box_a: f64,
    box_n: f64,
}

impl SampleSet {
    /// Validates box membership and pairwise distinctness.
    pub fn new(points: Points, box_a: f64, box_n: f64) -> Result<Self> {
        if !(box_a > 0.0 && box_a.is_finite() && box_n > 0.0 && box_n.is_finite()) {
            return Err(SeraError::domain(format!("box parameters must be positive, got A={box_a}, n={box_n}")));
        }
        let r = 3.0 * box_n / box_a;
        let slack = 1e-12 * r;
        if let Some((i, p)) = points.iter().enumerate().find(|(_, p)| p.iter().any(|c| !(c.abs() <= r + slack))) {
            return Err(SeraError::domain(format!("sample {i} at {p:?} lies outside [-{r}, {r}]^q")));
        }
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| lex_cmp(points.get(a), points.get(b)));
        if let Some(w) = order.windows(2).find(|w| points.get(w[0]) == points.get(w[1])) {
            return Err(SeraError::domain(format!("samples {} and {} coincide", w[0], w[1])));
        }
        Ok(SampleSet { points, box_a, box_n })
    }

    pub fn points(&self) -> &Points {
        &self.points
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn box_a(&self) -> f64 {
        self.box_a
    }

    pub fn box_n(&self) -> f64 {
        self.box_n
    }

    /// `3n/A`.
    pub fn half_side(&self) -> f64 {
        3.0 * self.box_n / self.box_a
    }
}

/// Sup-norm nearest-neighbour queries on a uniform cell hash.
struct CellIndex<'a> {
    points: &'a Points,
    cell: f64,
    cells: HashMap<Vec<i64>, Vec<usize>>,
    lo: Vec<i64>,
    hi: Vec<i64>,
}

impl<'a> CellIndex<'a> {
    fn new(points: &'a Points, extent: f64) -> Self {
        let q = points.dim();
        let n = points.len().max(1) as f64;
        let cell = (2.0 * extent.max(1e-300) / n.powf(1.0 / q as f64)).max(1e-12);
        let mut cells: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        let mut lo = vec![i64::MAX; q];
        let mut hi = vec![i64::MIN; q];
        for (i, p) in points.iter().enumerate() {
            let key: Vec<i64> = p.iter().map(|c| (c / cell).floor() as i64).collect();
            for d in 0..q {
                lo[d] = lo[d].min(key[d]);
                hi[d] = hi[d].max(key[d]);
            }
            cells.entry(key).or_default().push(i);
        }
        CellIndex { points, cell, cells, lo, hi }
    }

    /// Nearest point to `p` in the sup norm, skipping `exclude`.
    fn nearest(&self, p: &[f64], exclude: Option<usize>) -> Option<(usize, f64)> {
        let q = p.len();
        let key: Vec<i64> = p.iter().map(|c| (c / self.cell).floor() as i64).collect();
        let max_ring = (0..q).map(|d| (key[d] - self.lo[d]).abs().max((self.hi[d] - key[d]).abs())).max().unwrap_or(0);
        let mut best: Option<(usize, f64)> = None;
        let mut off = vec![0i64; q];
        for ring in 0..=max_ring {
            // Enumerate the offsets of Chebyshev length exactly `ring`.
            let side = 2 * ring + 1;
            let total = (side as u64).pow(q as u32);
            for code in 0..total {
                let mut c = code;
                let mut on_shell = false;
                for o in off.iter_mut() {
                    *o = (c % side as u64) as i64 - ring;
                    c /= side as u64;
                    on_shell |= o.abs() == ring;
                }
                if !on_shell {
                    continue;
                }
                let cell_key: Vec<i64> = key.iter().zip(&off).map(|(a, b)| a + b).collect();
                if let Some(list) = self.cells.get(&cell_key) {
                    for &i in list {
                        if Some(i) == exclude {
                            continue;
                        }
                        let d = sup_dist(p, self.points.get(i));
                        if best.is_none_or(|(bi, bd)| d < bd || (d == bd && i < bi)) {
                            best = Some((i, d));
                        }
                    }
                }
            }
            if let Some((_, d)) = best {
                if d <= ring as f64 * self.cell {
                    break;
                }
            }
        }
        best
    }
}

/// Fill distance and separation, both in the sup norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshStats {
    /// Largest distance from a probe of the box to the nearest sample.
    pub mesh_norm: f64,
    /// Smallest distance between two distinct samples; infinite for one point.
    pub separation: f64,
    /// Spacing of the probe lattice; `mesh_norm` is accurate to half of it.
    pub probe_spacing: f64,
}

fn lattice_axis(half: f64, spacing: f64) -> Vec<f64> {
    let count = ((2.0 * half / spacing).ceil() as usize).max(1);
    let h = 2.0 * half / count as f64;
    (0..=count).map(|i| -half + i as f64 * h).collect()
}

/// Mesh norm over a probe lattice of the sample box and the separation.
pub fn mesh_stats(samples: &SampleSet, probe_spacing: f64) -> Result<MeshStats> {
    if samples.is_empty() {
        return Err(SeraError::domain("mesh statistics of an empty point set"));
    }
    if !(probe_spacing > 0.0) {
        return Err(SeraError::domain(format!("probe spacing must be positive, got {probe_spacing}")));
    }
    let q = samples.dim();
    let half = samples.half_side();
    let index = CellIndex::new(samples.points(), half);
    let axis = lattice_axis(half, probe_spacing);
    let total = axis.len().pow(q as u32);
    let chunk = 4096;
    let mesh_norm = (0..total.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut worst = 0.0f64;
            let mut p = vec![0.0; q];
            for code in c * chunk..((c + 1) * chunk).min(total) {
                let mut k = code;
                for coord in p.iter_mut().rev() {
                    *coord = axis[k % axis.len()];
                    k /= axis.len();
                }
                if let Some((_, d)) = index.nearest(&p, None) {
                    worst = worst.max(d);
                }
            }
            worst
        })
        .reduce(|| 0.0, f64::max);
    let separation = (0..samples.len())
        .into_par_iter()
        .map(|i| index.nearest(samples.points().get(i), Some(i)).map_or(f64::INFINITY, |(_, d)| d))
        .reduce(|| f64::INFINITY, f64::min);
    Ok(MeshStats { mesh_norm, separation, probe_spacing: axis.get(1).map_or(0.0, |a| a - axis[0]) })
}

/// Checks `η ≤ 2δ ≤ 4η` after thinning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformityReport {
    pub separation: f64,
    pub mesh_norm: f64,
    /// `2δ/η`.
    pub ratio: f64,
    pub holds: bool,
}

/// Result of keeping one sample per cube.
#[derive(Debug, Clone)]
pub struct Thinning {
    pub samples: SampleSet,
    /// Indices into the input of the retained points, in cube order.
    pub kept: Vec<usize>,
    /// For each input point, the linear index of its cube.
    pub cube_of: Vec<usize>,
    pub cube_side: f64,
    pub cubes_per_axis: usize,
    pub input_mesh: MeshStats,
    pub report: UniformityReport,
}

/// Tiles the box with congruent cubes of side in `[3δ, 4δ]` and keeps, per
/// cube, the point closest to its centre (sup norm, then Euclidean, then
/// lexicographic order).
pub fn thin_points(samples: &SampleSet, probe_spacing: f64) -> Result<Thinning> {
    let input_mesh = mesh_stats(samples, probe_spacing)?;
    let delta = input_mesh.mesh_norm;
    if !(delta.is_finite() && delta > 0.0) {
        return Err(SeraError::domain(format!("cannot thin with mesh norm {delta}")));
    }
    let q = samples.dim();
    let half = samples.half_side();
    let per_axis = ((2.0 * half / (4.0 * delta)).ceil() as usize).max(1);
    let side = 2.0 * half / per_axis as f64;
    let cube_count = per_axis.pow(q as u32);
    let mut cube_of = Vec::with_capacity(samples.len());
    let mut best: Vec<Option<(usize, f64, f64)>> = vec![None; cube_count];
    for (i, p) in samples.points().iter().enumerate() {
        let mut lin = 0;
        let mut centre = vec![0.0; q];
        for (d, &c) in p.iter().enumerate() {
            let k = (((c + half) / side).floor().max(0.0) as usize).min(per_axis - 1);
            lin = lin * per_axis + k;
            centre[d] = -half + (k as f64 + 0.5) * side;
        }
        cube_of.push(lin);
        let ds = sup_dist(p, &centre);
        let de = crate::points::sq_dist(p, &centre);
        let better = match best[lin] {
            None => true,
            Some((j, bs, be)) => {
                (ds, de).partial_cmp(&(bs, be)) == Some(std::cmp::Ordering::Less)
                    || ((ds, de) == (bs, be) && lex_cmp(p, samples.points().get(j)).is_lt())
            }
        };
        if better {
            best[lin] = Some((i, ds, de));
        }
    }
    let mut kept = Vec::with_capacity(cube_count);
    for (cube, b) in best.iter().enumerate() {
        match b {
            Some((i, _, _)) => kept.push(*i),
            None => {
                return Err(SeraError::Internal(format!(
                    "cube {cube} of side {side} holds no sample although the mesh norm is {delta}"
                )))
            }
        }
    }
    let thinned = SampleSet::new(samples.points().select(&kept), samples.box_a, samples.box_n)?;
    let stats = mesh_stats(&thinned, probe_spacing)?;
    let ratio = 2.0 * stats.mesh_norm / stats.separation;
    let report = UniformityReport {
        separation: stats.separation,
        mesh_norm: stats.mesh_norm,
        ratio,
        // δ is measured on the probe grid, so it is known to within half a probe step.
        holds: stats.separation <= 2.0 * stats.mesh_norm + probe_spacing && ratio <= 4.0,
    };
    Ok(Thinning { samples: thinned, kept, cube_of, cube_side: side, cubes_per_axis: per_axis, input_mesh, report })
}

/// Right-hand side of the moment system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightsMode {
    /// `(2A)^{-q/2} δ_{k,0}`.
    PaperLiteral,
    /// `(√2·A)^{-q} ∏ᵢ ∫ψ_{kᵢ}`, the exact Gaussian moments.
    #[default]
    MomentExact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightsOptions {
    pub mode: WeightsMode,
    /// Largest `|k|₁` constrained; defaults to `⌊2n²⌋`.
    pub degree_budget: Option<u32>,
    pub beta_hat: f64,
    /// Probe spacing for the mesh check; `None` skips it.
    pub mesh_probe: Option<f64>,
    /// Constraint residual above which a warning is recorded.
    pub residual_tolerance: f64,
}

impl Default for WeightsOptions {
    fn default() -> Self {
        WeightsOptions {
            mode: WeightsMode::MomentExact,
            degree_budget: None,
            beta_hat: DEFAULT_BETA_HAT,
            mesh_probe: None,
            residual_tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureDiagnostics {
    pub constraints: usize,
    pub rank: usize,
    pub residual_norm: f64,
    pub condition_estimate: f64,
    pub sum_abs_weights: f64,
    pub max_abs_weight: f64,
    /// Present when `A = 2/√3`.
    pub product_orthogonality_residual: Option<f64>,
    pub mesh: Option<MeshStats>,
    pub beta_hat: f64,
    pub warnings: Vec<String>,
}

/// Points with solved weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureMeasure {
    pub points: Points,
    pub weights: Vec<f64>,
    pub a: f64,
    pub n: f64,
    pub degree_budget: u32,
    pub mode: WeightsMode,
    pub diagnostics: QuadratureDiagnostics,
}

fn is_sero_box(a: f64) -> bool {
    (a - SERO_BOX_A).abs() <= 1e-12
}

/// `ψ_m(scale·y_i)` for every point and coordinate, laid out
/// `[point][coord][m]`.
fn point_tables(points: &Points, degrees: usize, scale: f64) -> Vec<f64> {
    let q = points.dim();
    let mut out = vec![0.0; points.len() * q * degrees];
    out.par_chunks_mut(q * degrees).zip(points.as_flat().par_chunks(q)).for_each(|(dst, p)| {
        for (i, &c) in p.iter().enumerate() {
            fill_hermite(scale * c, &mut dst[i * degrees..(i + 1) * degrees]);
        }
    });
    out
}

/// Matrix with rows `k` and columns `y`: `ψ_k(scale·y)`.
fn multi_hermite_matrix(points: &Points, indices: &[MultiIndex], scale: f64) -> DMatrix<f64> {
    let q = points.dim();
    let degrees = indices.iter().map(|k| k.inf_norm() as usize + 1).max().unwrap_or(1);
    let tables = point_tables(points, degrees, scale);
    let mut m = DMatrix::zeros(indices.len(), points.len());
    m.as_mut_slice().par_chunks_mut(indices.len()).enumerate().for_each(|(col, dst)| {
        let t = &tables[col * q * degrees..(col + 1) * q * degrees];
        for (row, k) in indices.iter().enumerate() {
            dst[row] = k.entries().iter().enumerate().map(|(i, &ki)| t[i * degrees + ki as usize]).product();
        }
    });
    m
}

fn rhs(indices: &[MultiIndex], q: usize, a: f64, mode: WeightsMode) -> DVector<f64> {
    match mode {
        WeightsMode::PaperLiteral => {
            let v = (2.0 * a).powf(-(q as f64) / 2.0);
            DVector::from_iterator(indices.len(), indices.iter().map(|k| if k.one_norm() == 0 { v } else { 0.0 }))
        }
        WeightsMode::MomentExact => {
            let max = indices.iter().map(|k| k.inf_norm() as usize).max().unwrap_or(0);
            let ints = hermite_integrals(max);
            let scale = (std::f64::consts::SQRT_2 * a).powi(-(q as i32));
            DVector::from_iterator(
                indices.len(),
                indices.iter().map(|k| scale * k.entries().iter().map(|&e| ints[e as usize]).product::<f64>()),
            )
        }
    }
}

/// Solves the moment system on `samples`.
pub fn solve_weights(samples: &SampleSet, options: &WeightsOptions) -> Result<QuadratureMeasure> {
    if samples.is_empty() {
        return Err(SeraError::domain("cannot build a quadrature on an empty point set"));
    }
    let q = samples.dim();
    let (a, n) = (samples.box_a, samples.box_n);
    let budget = options.degree_budget.unwrap_or((2.0 * n * n).floor() as u32);
    let indices = multi_indices_up_to(q, budget);
    let matrix = multi_hermite_matrix(samples.points(), &indices, std::f64::consts::SQRT_2 * a);
    let b = rhs(&indices, q, a, options.mode);
    let sol = min_norm_lstsq(&matrix, &b, RANK_RTOL);
    let weights: Vec<f64> = sol.x.iter().copied().collect();

    let mut warnings = Vec::new();
    if !(sol.residual_norm <= options.residual_tolerance) {
        warnings.push(format!(
            "constraint residual {:.3e} exceeds tolerance {:.1e}",
            sol.residual_norm, options.residual_tolerance
        ));
    }
    if sol.rank < indices.len() {
        warnings.push(format!("constraint matrix has numerical rank {} of {}", sol.rank, indices.len()));
    }
    let mesh = match options.mesh_probe {
        Some(h) => {
            let stats = mesh_stats(samples, h)?;
            let bound = options.beta_hat / (n * a);
            if stats.mesh_norm > bound {
                warnings.push(format!(
                    "mesh norm {:.4} exceeds β/(nA) = {:.4} with β = {}",
                    stats.mesh_norm, bound, options.beta_hat
                ));
            }
            Some(stats)
        }
        None => None,
    };
    let mut qm = QuadratureMeasure {
        points: samples.points().clone(),
        weights,
        a,
        n,
        degree_budget: budget,
        mode: options.mode,
        diagnostics: QuadratureDiagnostics {
            constraints: indices.len(),
            rank: sol.rank,
            residual_norm: sol.residual_norm,
            condition_estimate: sol.condition_estimate,
            sum_abs_weights: 0.0,
            max_abs_weight: 0.0,
            product_orthogonality_residual: None,
            mesh,
            beta_hat: options.beta_hat,
            warnings,
        },
    };
    qm.refresh_weight_stats();
    if is_sero_box(a) {
        let degree = (budget / 2) as usize;
        qm.diagnostics.product_orthogonality_residual = Some(product_orthogonality_residual(&qm, degree)?);
    }
    Ok(qm)
}

impl QuadratureMeasure {
    /// Measure from stored points and weights, e.g. a weights file.
    pub fn from_parts(points: Points, weights: Vec<f64>, a: f64, n: f64, mode: WeightsMode) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(SeraError::domain(format!("{} points but {} weights", points.len(), weights.len())));
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(SeraError::domain(format!("weight {i} is not finite")));
        }
        let budget = (2.0 * n * n).floor() as u32;
        let mut qm = QuadratureMeasure {
            points,
            weights,
            a,
            n,
            degree_budget: budget,
            mode,
            diagnostics: QuadratureDiagnostics {
                constraints: 0,
                rank: 0,
                residual_norm: f64::NAN,
                condition_estimate: f64::NAN,
                sum_abs_weights: 0.0,
                max_abs_weight: 0.0,
                product_orthogonality_residual: None,
                mesh: None,
                beta_hat: DEFAULT_BETA_HAT,
                warnings: Vec::new(),
            },
        };
        qm.refresh_weight_stats();
        Ok(qm)
    }

    fn refresh_weight_stats(&mut self) {
        self.diagnostics.sum_abs_weights = self.weights.iter().map(|w| w.abs()).sum();
        self.diagnostics.max_abs_weight = self.weights.iter().fold(0.0, |m, w| m.max(w.abs()));
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Largest kernel level `N` whose operator this measure discretizes
    /// exactly: `2⌈N²⌉ - 2 ≤ budget`.
    pub fn supports_level(&self, level: f64) -> bool {
        let cap = (level * level).ceil() as u32;
        2 * cap.saturating_sub(1) <= self.degree_budget
    }

    pub fn to_table(&self) -> PointTable {
        PointTable { points: self.points.clone(), values: self.weights.clone() }
    }

    /// Weights file: `y_1,...,y_q,w`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        self.to_table().write_csv(path, "y", "w")
    }

    pub fn read_csv(path: &Path, a: f64, n: f64, mode: WeightsMode) -> Result<Self> {
        let t = PointTable::read_csv(path, "y", "w")?;
        Self::from_parts(t.points, t.values, a, n, mode)
    }
}

/// `max_{|k|₁,|j|₁ ≤ degree} |Σ_y w_y ψ_k(2y/√3) ψ_j(2y/√3) − (√3/2)^q δ_{kj}|`.
pub fn product_orthogonality_residual(qm: &QuadratureMeasure, degree: usize) -> Result<f64> {
    if !is_sero_box(qm.a) {
        return Err(SeraError::domain(format!("product orthogonality holds only for A = 2/√3, got {}", qm.a)));
    }
    let q = qm.dim();
    let indices = multi_indices_up_to(q, degree as u32);
    let psi = multi_hermite_matrix(&qm.points, &indices, SERO_BOX_A);
    let mut weighted = psi.clone();
    for (j, mut col) in weighted.column_iter_mut().enumerate() {
        col *= qm.weights[j];
    }
    let gram = &weighted * psi.transpose();
    let diag = (3f64.sqrt() / 2.0).powi(q as i32);
    let mut worst = 0.0f64;
    for r in 0..gram.nrows() {
        for c in 0..gram.ncols() {
            let target = if r == c { diag } else { 0.0 };
            worst = worst.max((gram[(r, c)] - target).abs());
        }
    }
    Ok(worst)
}
