//! Discrete recovery operator.
//!
//! For a quadrature measure `ν` on the samples, the operator maps data `𝔾` to
//! the field
//!
//! ```text
//! U(x) = Σ_y w_y Φ*_n(x, y) exp(-|y|²/3) 𝔾(y)
//! ```
//!
//! on a lattice of evaluation points. The matrix is assembled in factored
//! form: with `P_x[j] = c_{|j|₁} ψ_j(x)` and `Q_y[j] = ψ_j(2y/√3) w_y e^{-|y|²/3}`,
//! the entries are `Σ_j P_x[j] Q_y[j]`, a plain matrix product.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::io::PointTable;
use crate::kernels::{layered_sum, HermiteTable, KernelSpec, ReferenceGrid, TWO_OVER_SQRT3};
use crate::quadrature::QuadratureMeasure;
use crate::special::{fill_hermite, multi_indices_up_to, MultiIndex};
use crate::{Points, Result, SeraError, SERO_BOX_A};

/// Rows per independently assembled block. Fixed so that results do not
/// depend on the thread count.
const BLOCK_ROWS: usize = 512;

/// Half side `3√3·level/2` of the evaluation box.
pub fn grid_half_side(level: f64) -> f64 {
    1.5 * 3f64.sqrt() * level
}

/// Default lattice spacing `min(α̂/(2·level), 0.5/level)`.
pub fn default_spacing(alpha_hat: f64, level: f64) -> f64 {
    (alpha_hat / (2.0 * level)).min(0.5 / level)
}

/// Tensor lattice over `[-h, h]^q`, `h = 3√3·level/2`.
///
/// Each axis holds the multiples of `spacing` inside `[-h, h]` together with
/// both endpoints, so the origin and the box corners are always grid points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationGrid {
    pub level: f64,
    pub spacing: f64,
    pub axis: Vec<f64>,
    pub points: Points,
}

pub fn build_grid(level: f64, q: usize, spacing: f64) -> Result<EvaluationGrid> {
    build_grid_with_half_side(level, q, spacing, grid_half_side(level))
}

/// Lattice over a custom half side; `level` is kept for reference only.
pub fn build_grid_with_half_side(level: f64, q: usize, spacing: f64, half: f64) -> Result<EvaluationGrid> {
    if !(level > 0.0 && level.is_finite()) {
        return Err(SeraError::domain(format!("grid level must be positive, got {level}")));
    }
    if q == 0 {
        return Err(SeraError::domain("grid dimension must be at least 1"));
    }
    if !(half > 0.0 && half.is_finite()) {
        return Err(SeraError::domain(format!("grid half side must be positive, got {half}")));
    }
    if !(spacing > 0.0) || spacing > 2.0 * half {
        return Err(SeraError::domain(format!(
            "grid spacing {spacing} must be positive and at most the box side {}",
            2.0 * half
        )));
    }
    let m = (half / spacing * (1.0 + 1e-12)).floor() as i64;
    let mut axis: Vec<f64> = (-m..=m).map(|k| k as f64 * spacing).collect();
    if half - m as f64 * spacing > 1e-9 * spacing {
        axis.insert(0, -half);
        axis.push(half);
    } else {
        axis[0] = -half;
        let last = axis.len() - 1;
        axis[last] = half;
    }
    let count = axis.len().pow(q as u32);
    let mut data = Vec::with_capacity(count * q);
    for code in 0..count {
        let mut c = code;
        let start = data.len();
        data.resize(start + q, 0.0);
        for slot in data[start..].iter_mut().rev() {
            *slot = axis[c % axis.len()];
            c /= axis.len();
        }
    }
    Ok(EvaluationGrid { level, spacing, axis, points: Points::new(q, data)? })
}

impl EvaluationGrid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    /// Index of the grid point nearest to `x` (per axis).
    pub fn nearest_index(&self, x: &[f64]) -> usize {
        x.iter().fold(0, |acc, &c| {
            let k = match self.axis.binary_search_by(|a| a.total_cmp(&c)) {
                Ok(k) => k,
                Err(0) => 0,
                Err(k) if k >= self.axis.len() => self.axis.len() - 1,
                Err(k) => {
                    if (c - self.axis[k - 1]).abs() <= (self.axis[k] - c).abs() {
                        k - 1
                    } else {
                        k
                    }
                }
            };
            acc * self.axis.len() + k
        })
    }
}

/// Matrix of the discrete operator, stored in fixed row blocks.
#[derive(Debug, Clone)]
pub struct OperatorMatrix {
    grid: Arc<EvaluationGrid>,
    spec: KernelSpec,
    samples: usize,
    blocks: Vec<DMatrix<f64>>,
}

/// Layer-weighted multi-Hermite rows for a set of points.
fn weighted_basis(
    points: &Points,
    indices: &[MultiIndex],
    scale: f64,
    row_scale: &[f64],
    col_weight: &[f64],
) -> DMatrix<f64> {
    let q = points.dim();
    let degrees = indices.iter().map(|k| k.inf_norm() as usize + 1).max().unwrap_or(1);
    // Rows are points, columns multi-indices.
    let mut out = DMatrix::zeros(points.len(), indices.len());
    let tables: Vec<Vec<f64>> = points
        .as_flat()
        .par_chunks(q)
        .map(|p| {
            let mut t = vec![0.0; q * degrees];
            for (i, &c) in p.iter().enumerate() {
                fill_hermite(scale * c, &mut t[i * degrees..(i + 1) * degrees]);
            }
            t
        })
        .collect();
    for (col, k) in indices.iter().enumerate() {
        for (row, t) in tables.iter().enumerate() {
            let v: f64 = k.entries().iter().enumerate().map(|(i, &ki)| t[i * degrees + ki as usize]).product();
            out[(row, col)] = v * row_scale[row] * col_weight[col];
        }
    }
    out
}

/// Assembles `entry(x, y) = w_y Φ*_n(x, y) exp(-|y|²/3)`.
pub fn assemble_operator(
    qm: &QuadratureMeasure,
    grid: Arc<EvaluationGrid>,
    spec: &KernelSpec,
) -> Result<OperatorMatrix> {
    if (qm.a - SERO_BOX_A).abs() > 1e-12 {
        return Err(SeraError::domain(format!("the operator needs weights for A = 2/√3, got A = {}", qm.a)));
    }
    if qm.dim() != spec.q || grid.dim() != spec.q {
        return Err(SeraError::domain(format!(
            "dimension mismatch: kernel q={}, samples q={}, grid q={}",
            spec.q,
            qm.dim(),
            grid.dim()
        )));
    }
    if !qm.supports_level(spec.n) {
        return Err(SeraError::domain(format!(
            "weights with degree budget {} do not integrate the level-{} kernel exactly (need {})",
            qm.degree_budget,
            spec.n,
            2 * (spec.degree_cap() - 1)
        )));
    }
    let cap = spec.degree_cap();
    let indices = multi_indices_up_to(spec.q, cap as u32 - 1);
    let layer = spec.phi_star_weights();
    let layer_of: Vec<f64> = indices.iter().map(|k| layer[k.one_norm() as usize]).collect();
    let sample_scale: Vec<f64> =
        qm.points.iter().zip(&qm.weights).map(|(y, w)| w * (-crate::points::sq_norm(y) / 3.0).exp()).collect();
    let ones_idx = vec![1.0; indices.len()];
    // S × R, transposed once to R × S.
    let right = weighted_basis(&qm.points, &indices, TWO_OVER_SQRT3, &sample_scale, &ones_idx).transpose();
    let rows = grid.len();
    let q = spec.q;
    let blocks: Vec<DMatrix<f64>> = (0..rows.div_ceil(BLOCK_ROWS))
        .into_par_iter()
        .map(|b| {
            let lo = b * BLOCK_ROWS;
            let hi = (lo + BLOCK_ROWS).min(rows);
            let pts = Points::new(q, grid.points.as_flat()[lo * q..hi * q].to_vec()).expect("grid slice");
            let ones = vec![1.0; hi - lo];
            let left = weighted_basis(&pts, &indices, 1.0, &ones, &layer_of);
            &left * &right
        })
        .collect();
    if blocks.iter().any(|m| m.iter().any(|v| !v.is_finite())) {
        return Err(SeraError::Internal("operator matrix has non-finite entries".into()));
    }
    Ok(OperatorMatrix { grid, spec: *spec, samples: qm.len(), blocks })
}

impl OperatorMatrix {
    pub fn grid(&self) -> &Arc<EvaluationGrid> {
        &self.grid
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn level(&self) -> f64 {
        self.spec.n
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.grid.len(), self.samples)
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.blocks[row / BLOCK_ROWS][(row % BLOCK_ROWS, col)]
    }

    /// Field `U(x) = Σ_y entry(x, y) data(y)`.
    pub fn apply(&self, data: &[f64]) -> Result<FieldValues> {
        if data.len() != self.samples {
            return Err(SeraError::domain(format!(
                "data has {} values but the operator has {} samples",
                data.len(),
                self.samples
            )));
        }
        let v = nalgebra::DVectorView::from_slice(data, data.len());
        let parts: Vec<Vec<f64>> = self.blocks.par_iter().map(|m| (m * v).iter().copied().collect()).collect();
        Ok(FieldValues { grid: Arc::clone(&self.grid), level: self.spec.n, values: parts.concat() })
    }

    /// Applies the same matrix to several data vectors concurrently.
    pub fn apply_many(&self, frames: &[Vec<f64>]) -> Result<Vec<FieldValues>> {
        frames.par_iter().map(|d| self.apply(d)).collect()
    }
}

/// Values of a field on an evaluation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldValues {
    pub grid: Arc<EvaluationGrid>,
    pub level: f64,
    pub values: Vec<f64>,
}

impl FieldValues {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.grid.points.get(i)
    }

    pub fn to_table(&self) -> PointTable {
        PointTable { points: self.grid.points.clone(), values: self.values.clone() }
    }

    /// Field dump `x_1,...,x_q,value`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::io::write_field(path, &self.to_table())
    }
}

/// Trapezoid approximation of `∫ f(u) Φ*_n(x, u) exp(-|u|²/3) du` on the
/// tensor grid, used to check the discrete operator.
pub fn continuous_sero_oracle<F>(spec: &KernelSpec, f: F, x: &[f64], grid: &ReferenceGrid) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if x.len() != spec.q {
        return Err(SeraError::domain(format!("point of dimension {} for a kernel of dimension {}", x.len(), spec.q)));
    }
    grid.validate(grid_half_side(spec.n) + 10.0)?;
    let (us, ws) = grid.nodes();
    let k = spec.degree_cap();
    let weights = spec.phi_star_weights();
    let tx = HermiteTable::new(x, k, 1.0);
    let q = spec.q;
    let m = us.len();
    let inner = m.pow(q as u32 - 1);
    // One task per node of the first axis; partial sums are combined in order.
    let partial: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|first| {
            let mut u = vec![0.0; q];
            u[0] = us[first];
            let mut s = 0.0;
            for code in 0..inner {
                let mut c = code;
                let mut w = ws[first];
                for d in (1..q).rev() {
                    u[d] = us[c % m];
                    w *= ws[c % m];
                    c /= m;
                }
                let fu = f(&u);
                if fu == 0.0 {
                    continue;
                }
                let tu = HermiteTable::new(&u, k, TWO_OVER_SQRT3);
                s += w * fu * layered_sum(&tx, &tu, &weights) * (-crate::points::sq_norm(&u) / 3.0).exp();
            }
            s
        })
        .collect();
    Ok(partial.iter().sum())
}
