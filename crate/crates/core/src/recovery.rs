//! From a recovery field to spikes.
//!
//! The level-`N` field is thresholded at `A₂μ/2`, the surviving grid points
//! are split into clusters by single linkage, each cluster's center is the
//! argmax of the level-`n` field, and amplitudes are read off the level-`n`
//! field at the centers. The kernel constants `A₁, A₂, α, C₁` have no closed
//! form; they are measured on lattices inside a box and reported.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::kernels::{HermiteTable, KernelSpec, PhiEvaluator};
use crate::points::{euclid_dist, lex_cmp, sq_norm};
use crate::quadrature::QuadratureMeasure;
use crate::sero::{
    assemble_operator, build_grid_with_half_side, default_spacing, grid_half_side, EvaluationGrid, FieldValues,
    OperatorMatrix,
};
use crate::{Points, Result, SeraError, SERO_BOX_A};

/// Upper bound on the number of point pairs examined for `A₁` and `α`.
const PAIR_BUDGET: f64 = 4.0e6;

/// Largest tolerated [`KernelSpec::phi_star_amplification`]. Rounding errors
/// near `1e-16` then stay below about `1e-5` in the field.
pub const AMPLIFICATION_LIMIT: f64 = 1e11;

/// How amplitudes are read from the level-`n` field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmplitudeMode {
    /// `â = U_n(x̂)`.
    PaperLiteral,
    /// `â = U_n(x̂) / Φ_n(x̂, x̂)`.
    #[default]
    Normalized,
    /// Solves `Σ_j Φ_n(x̂_i, x̂_j) â_j = U_n(x̂_i)`, removing crosstalk between spikes.
    Joint,
}

/// How recovered positions map back to original coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RescaleMode {
    /// `z = 2v·x`, amplitudes unchanged.
    #[default]
    Derived,
    /// `z = v·x`, `α = (πv²)^{q/2}·a`.
    RemarkLiteral,
}

/// Coordinate frame of a set of recovered spikes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    Scaled,
    Original,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoveryParams {
    /// Coarse level `n`.
    pub n: f64,
    /// Refinement `ρ ≥ 1`; the fine level is at least `ρ·n`.
    pub rho: f64,
    /// Smallest amplitude magnitude `μ`.
    pub mu: f64,
    /// Smallest spike separation `η`.
    pub eta: f64,
    /// Localization exponent; `q + 2` when absent.
    pub s: Option<u32>,
    pub amplitude_mode: AmplitudeMode,
    pub rescale_mode: RescaleMode,
    /// Optional cap on the fine level on top of what the weights support.
    pub max_level: Option<f64>,
    /// Evaluation lattice spacing; `min(α̂/(2N), 0.5/N)` when absent.
    pub grid_spacing: Option<f64>,
    /// Half side of the evaluation window; the full `3√3N/2` box when absent.
    pub window: Option<f64>,
    /// Box `|x|_∞ ≤ R` in which kernel constants are measured; `0.75·n` when absent.
    pub constants_box: Option<f64>,
    /// Known amplitude mass `Σ|a|`; estimated by a coarse pass when absent.
    pub m_hint: Option<f64>,
    /// Known bound on the clutter variation `‖τ_c‖`, checked against `A₂μ/(16A₁)`.
    pub clutter_bound: Option<f64>,
    /// Blur scale `v` of the data.
    pub v: f64,
}

impl Default for RecoveryParams {
    fn default() -> Self {
        RecoveryParams {
            n: 4.0,
            rho: 1.0,
            mu: 1.0,
            eta: 2.0,
            s: None,
            amplitude_mode: AmplitudeMode::default(),
            rescale_mode: RescaleMode::default(),
            max_level: None,
            grid_spacing: None,
            window: None,
            constants_box: None,
            m_hint: None,
            clutter_bound: None,
            v: 0.5,
        }
    }
}

impl RecoveryParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(SeraError::domain(format!("{name} must be positive, got {v}")))
            }
        };
        positive("n", self.n)?;
        positive("mu", self.mu)?;
        positive("eta", self.eta)?;
        positive("v", self.v)?;
        if !(self.rho.is_finite() && self.rho >= 1.0) {
            return Err(SeraError::domain(format!("rho must be at least 1, got {}", self.rho)));
        }
        for (name, v) in [
            ("max_level", self.max_level),
            ("grid_spacing", self.grid_spacing),
            ("window", self.window),
            ("constants_box", self.constants_box),
            ("m_hint", self.m_hint),
        ] {
            if let Some(v) = v {
                positive(name, v)?;
            }
        }
        if let Some(b) = self.clutter_bound {
            if !(b.is_finite() && b >= 0.0) {
                return Err(SeraError::domain(format!("clutter_bound must be non-negative, got {b}")));
            }
        }
        if let Some(m) = self.max_level {
            if m < self.n {
                return Err(SeraError::domain(format!("max_level {m} is below n = {}", self.n)));
            }
        }
        Ok(())
    }

    pub fn kernel(&self, q: usize) -> Result<KernelSpec> {
        let spec = KernelSpec::new(self.n, q)?;
        match self.s {
            Some(s) => KernelSpec::with_params(self.n, q, s, spec.cutoff),
            None => Ok(spec),
        }
    }

    pub fn constants_box_radius(&self) -> f64 {
        self.constants_box.unwrap_or(0.75 * self.n)
    }
}

/// Kernel constants measured on lattices in `|x|_∞ ≤ R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConstants {
    pub n: f64,
    pub s: u32,
    pub box_radius: f64,
    /// `max |Φ_n(x,y)|·max(1, (n|x−y|)^S)` over sampled pairs.
    pub a1: f64,
    /// `min Φ_n(x,x)` over the diagonal lattice.
    pub a2: f64,
    /// `n` times the largest sampled radius below the first pair violating
    /// `0 ≤ Φ_n(x,y) ≤ (Φ_n(x,x) + Φ_n(y,y))/2`.
    pub alpha: f64,
    /// Distance of the closest violating pair, if any was found.
    pub violation_distance: Option<f64>,
    /// `C = R/n`, the box scale.
    pub c: f64,
    /// `max |Φ_n(x,x) − Φ_n(y,y)|·n^q/|x−y|` over lattice neighbours.
    pub c1: f64,
    pub diag_spacing: f64,
    pub pair_spacing: f64,
}

/// Constants entering the thresholds, with the amplitude data they depend on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryConstants {
    #[serde(rename = "A1_hat")]
    pub a1_hat: f64,
    #[serde(rename = "A2_hat")]
    pub a2_hat: f64,
    pub gamma_hat: f64,
    pub alpha_hat: f64,
    #[serde(rename = "M_hat")]
    pub m_hat: f64,
    #[serde(rename = "B_hat")]
    pub b_hat: f64,
    #[serde(rename = "C_hat")]
    pub c_hat: f64,
    #[serde(rename = "C1_hat")]
    pub c1_hat: f64,
    pub mu: f64,
    pub s: u32,
    pub box_radius: f64,
    /// `hint`, `bootstrap` or `minimum`.
    pub m_source: String,
}

impl RecoveryConstants {
    pub fn from_kernel(k: &KernelConstants, m_hat: f64, mu: f64, m_source: &str) -> Result<Self> {
        if !(k.a2 > 0.0) {
            return Err(SeraError::domain("A2_hat must be positive"));
        }
        if !(mu > 0.0 && m_hat > 0.0) {
            return Err(SeraError::domain(format!("mu and M_hat must be positive, got {mu} and {m_hat}")));
        }
        Ok(RecoveryConstants {
            a1_hat: k.a1,
            a2_hat: k.a2,
            gamma_hat: gamma(k.a1, k.a2, m_hat, mu, k.s),
            alpha_hat: k.alpha,
            m_hat,
            b_hat: k.box_radius,
            c_hat: k.c,
            c1_hat: k.c1,
            mu,
            s: k.s,
            box_radius: k.box_radius,
            m_source: m_source.to_string(),
        })
    }

    /// Threshold `A₂μ/2`.
    pub fn threshold(&self) -> f64 {
        self.a2_hat * self.mu / 2.0
    }
}

/// `γ = max(1, (8A₁M/(A₂μ))^{1/S})`.
pub fn gamma(a1: f64, a2: f64, m: f64, mu: f64, s: u32) -> f64 {
    (8.0 * a1 * m / (a2 * mu)).powf(1.0 / s as f64).max(1.0)
}

/// Tensor lattice of `per_axis^q` points on `[-r, r]^q`.
fn box_lattice(q: usize, r: f64, per_axis: usize) -> (Points, f64) {
    let per_axis = per_axis.max(2);
    let h = 2.0 * r / (per_axis - 1) as f64;
    let axis: Vec<f64> = (0..per_axis).map(|i| -r + i as f64 * h).collect();
    let count = per_axis.pow(q as u32);
    let mut data = Vec::with_capacity(count * q);
    for code in 0..count {
        let mut c = code;
        let start = data.len();
        data.resize(start + q, 0.0);
        for slot in data[start..].iter_mut().rev() {
            *slot = axis[c % per_axis];
            c /= per_axis;
        }
    }
    (Points::new(q, data).expect("lattice"), h)
}

/// Measures `A₁, A₂, α, C₁` for `spec` on the box `|x|_∞ ≤ box_radius`.
pub fn estimate_kernel_constants(spec: &KernelSpec, box_radius: f64) -> Result<KernelConstants> {
    let n = spec.n;
    let q = spec.q;
    if !(box_radius > 0.0) || box_radius > grid_half_side(n) {
        return Err(SeraError::domain(format!(
            "constants box radius {box_radius} must lie in (0, 3√3·n/2 = {}]",
            grid_half_side(n)
        )));
    }
    let eval = PhiEvaluator::new(*spec);

    let diag_axis = ((2.0 * box_radius * 4.0 * n).ceil() as usize + 1).max(3);
    let (diag_pts, diag_h) = box_lattice(q, box_radius, diag_axis);
    let diag: Vec<f64> = diag_pts
        .iter()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|x| {
            let t = eval.table(x);
            eval.eval_tables(&t, &t)
        })
        .collect();
    let a2 = diag.iter().copied().fold(f64::INFINITY, f64::min);
    if !(a2 > 0.0) {
        return Err(SeraError::domain(format!(
            "Φ_n(x,x) is not positive on the box |x|_∞ ≤ {box_radius} (min {a2}); use a smaller box or a larger n"
        )));
    }
    let nq = n.powi(q as i32);
    let mut c1: f64 = 0.0;
    for (idx, x) in diag_pts.iter().enumerate() {
        let mut stride = 1;
        for _ in 0..q {
            let coord_index = (idx / stride) % diag_axis;
            if coord_index + 1 < diag_axis {
                let j = idx + stride;
                let d = euclid_dist(x, diag_pts.get(j));
                c1 = c1.max((diag[idx] - diag[j]).abs() * nq / d);
            }
            stride *= diag_axis;
        }
    }

    let max_axis = PAIR_BUDGET.powf(1.0 / (2 * q) as f64).floor() as usize;
    let pair_axis = diag_axis.min(max_axis).max(3);
    let (pair_pts, pair_h) = box_lattice(q, box_radius, pair_axis);
    let tables: Vec<HermiteTable> = pair_pts.iter().map(|x| eval.table(x)).collect();
    let pair_diag: Vec<f64> = tables.iter().map(|t| eval.eval_tables(t, t)).collect();
    let dmax = pair_diag.iter().copied().fold(0.0, f64::max);
    let tol = 1e-12 * dmax;
    let s = spec.s as i32;
    let (a1, violation) = (0..pair_pts.len())
        .into_par_iter()
        .map(|i| {
            let x = pair_pts.get(i);
            let mut a1: f64 = 0.0;
            let mut viol = f64::INFINITY;
            for j in 0..pair_pts.len() {
                let d = euclid_dist(x, pair_pts.get(j));
                let phi = eval.eval_tables(&tables[i], &tables[j]);
                a1 = a1.max(phi.abs() * (n * d).powi(s).max(1.0));
                if d > 0.0 && (phi < -tol || phi > 0.5 * (pair_diag[i] + pair_diag[j]) + tol) {
                    viol = viol.min(d);
                }
            }
            (a1, viol)
        })
        .reduce(|| (0.0, f64::INFINITY), |a, b| (a.0.max(b.0), a.1.min(b.1)));

    // Largest lattice difference length below the first violation.
    let steps = pair_axis - 1;
    let mut radius: f64 = 0.0;
    let mut k = vec![0usize; q];
    loop {
        let d = pair_h * (k.iter().map(|&v| (v * v) as f64).sum::<f64>()).sqrt();
        if d < violation {
            radius = radius.max(d);
        }
        let mut pos = 0;
        while pos < q && k[pos] == steps {
            k[pos] = 0;
            pos += 1;
        }
        if pos == q {
            break;
        }
        k[pos] += 1;
    }
    if radius == 0.0 {
        return Err(SeraError::domain(format!(
            "the positivity radius α is below the sampling resolution {pair_h}; use a smaller box"
        )));
    }
    Ok(KernelConstants {
        n,
        s: spec.s,
        box_radius,
        a1,
        a2,
        alpha: n * radius,
        violation_distance: violation.is_finite().then_some(violation),
        c: box_radius / n,
        c1,
        diag_spacing: diag_h,
        pair_spacing: pair_h,
    })
}

/// Kernel constants plus `γ̂`; without `m_hint` the mass is taken as `μ`.
pub fn estimate_constants(
    spec: &KernelSpec,
    params: &RecoveryParams,
    box_radius: f64,
    m_hint: Option<f64>,
) -> Result<RecoveryConstants> {
    params.validate()?;
    let k = estimate_kernel_constants(spec, box_radius)?;
    match m_hint {
        Some(m) => RecoveryConstants::from_kernel(&k, m, params.mu, "hint"),
        None => RecoveryConstants::from_kernel(&k, params.mu, params.mu, "minimum"),
    }
}

/// Indices of grid points with `|U(x)| ≥ A₂μ/2`.
pub fn threshold_field(field: &FieldValues, constants: &RecoveryConstants, mu: f64) -> Vec<usize> {
    let t = constants.a2_hat * mu / 2.0;
    field.values.iter().enumerate().filter(|(_, v)| v.abs() >= t).map(|(i, _)| i).collect()
}

/// Grid indices forming one connected component.
pub type Cluster = Vec<usize>;

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Single-linkage components of `members` with link radius `η/2`.
///
/// Clusters are ordered by their lexicographically smallest point, and each
/// cluster lists its members in increasing index order.
pub fn cluster(points: &Points, members: &[usize], eta: f64) -> Result<Vec<Cluster>> {
    if !(eta > 0.0) {
        return Err(SeraError::domain(format!("eta must be positive, got {eta}")));
    }
    let link = eta / 2.0;
    let q = points.dim();
    let cell = |p: &[f64]| -> Vec<i64> { p.iter().map(|c| (c / link).floor() as i64).collect() };
    let mut buckets: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    for (slot, &i) in members.iter().enumerate() {
        buckets.entry(cell(points.get(i))).or_default().push(slot);
    }
    let mut parent: Vec<usize> = (0..members.len()).collect();
    let offsets: Vec<Vec<i64>> = (0..3usize.pow(q as u32))
        .map(|mut code| {
            (0..q)
                .map(|_| {
                    let o = (code % 3) as i64 - 1;
                    code /= 3;
                    o
                })
                .collect()
        })
        .collect();
    for (slot, &i) in members.iter().enumerate() {
        let p = points.get(i);
        let base = cell(p);
        for off in &offsets {
            let key: Vec<i64> = base.iter().zip(off).map(|(b, o)| b + o).collect();
            if let Some(list) = buckets.get(&key) {
                for &other in list {
                    if other > slot && euclid_dist(p, points.get(members[other])) <= link {
                        let (ra, rb) = (find(&mut parent, slot), find(&mut parent, other));
                        if ra != rb {
                            parent[ra.max(rb)] = ra.min(rb);
                        }
                    }
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Cluster> = BTreeMap::new();
    for (slot, &m) in members.iter().enumerate() {
        let root = find(&mut parent, slot);
        groups.entry(root).or_default().push(m);
    }
    let mut out: Vec<Cluster> = groups
        .into_values()
        .map(|mut c| {
            c.sort_unstable();
            c
        })
        .collect();
    let first =
        |c: &Cluster| c.iter().copied().min_by(|&a, &b| lex_cmp(points.get(a), points.get(b))).expect("non-empty");
    out.sort_by(|a, b| lex_cmp(points.get(first(a)), points.get(first(b))));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterInfo {
    pub size: usize,
    pub diameter: f64,
}

/// Geometry of the clusters checked against the localization theory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub clusters: Vec<ClusterInfo>,
    /// `distances[i][j]`: smallest distance between clusters `i` and `j`.
    pub distances: Vec<Vec<f64>>,
    pub diameter_bound: f64,
    pub separation_bound: f64,
    pub oversized: Vec<usize>,
    pub too_close: Vec<(usize, usize)>,
}

impl ClusterReport {
    pub fn holds(&self) -> bool {
        self.oversized.is_empty() && self.too_close.is_empty()
    }

    pub fn min_distance(&self) -> Option<f64> {
        self.distances.iter().enumerate().flat_map(|(i, row)| row[i + 1..].iter().copied()).reduce(f64::min)
    }

    pub fn into_result(self) -> Result<Self> {
        if self.holds() {
            return Ok(self);
        }
        let mut msg = String::from("cluster geometry inconsistent with (mu, eta, n); increase n.");
        for &i in &self.oversized {
            msg.push_str(&format!(
                " cluster {i} has diameter {:.6} > {:.6}.",
                self.clusters[i].diameter, self.diameter_bound
            ));
        }
        for &(i, j) in &self.too_close {
            msg.push_str(&format!(
                " clusters {i} and {j} are {:.6} apart < {:.6}.",
                self.distances[i][j], self.separation_bound
            ));
        }
        Err(SeraError::Recovery(msg))
    }
}

/// Checks `diam ≤ diameter_bound` and pairwise distance `≥ η/2`.
pub fn validate_clusters(points: &Points, clusters: &[Cluster], diameter_bound: f64, eta: f64) -> ClusterReport {
    let diameter = |c: &Cluster| {
        c.par_iter()
            .map(|&i| c.iter().map(|&j| euclid_dist(points.get(i), points.get(j))).fold(0.0, f64::max))
            .reduce(|| 0.0, f64::max)
    };
    let infos: Vec<ClusterInfo> =
        clusters.iter().map(|c| ClusterInfo { size: c.len(), diameter: diameter(c) }).collect();
    let l = clusters.len();
    let mut distances = vec![vec![0.0; l]; l];
    for i in 0..l {
        for j in i + 1..l {
            let d = clusters[i]
                .par_iter()
                .map(|&a| {
                    clusters[j].iter().map(|&b| euclid_dist(points.get(a), points.get(b))).fold(f64::INFINITY, f64::min)
                })
                .reduce(|| f64::INFINITY, f64::min);
            distances[i][j] = d;
            distances[j][i] = d;
        }
    }
    let separation_bound = eta / 2.0;
    let oversized = (0..l).filter(|&i| infos[i].diameter > diameter_bound).collect();
    let too_close = (0..l)
        .flat_map(|i| (i + 1..l).map(move |j| (i, j)))
        .filter(|&(i, j)| distances[i][j] < separation_bound)
        .collect();
    ClusterReport { clusters: infos, distances, diameter_bound, separation_bound, oversized, too_close }
}

/// Per cluster, the index maximizing `|coarse|`; ties go to the
/// lexicographically smallest point.
pub fn locate_peaks(clusters: &[Cluster], coarse: &FieldValues) -> Result<Vec<usize>> {
    clusters
        .iter()
        .enumerate()
        .map(|(c, members)| {
            let mut best: Option<usize> = None;
            for &i in members {
                if i >= coarse.len() {
                    return Err(SeraError::Internal(format!("cluster {c} refers to grid point {i} outside the field")));
                }
                best = Some(match best {
                    None => i,
                    Some(b) => {
                        let (vi, vb) = (coarse.values[i].abs(), coarse.values[b].abs());
                        if vi > vb || (vi == vb && lex_cmp(coarse.point(i), coarse.point(b)).is_lt()) {
                            i
                        } else {
                            b
                        }
                    }
                });
            }
            best.ok_or_else(|| SeraError::Internal(format!("cluster {c} has no field values")))
        })
        .collect()
}

/// Amplitudes at `centers` from coarse field values `u`.
///
/// `min_diag` guards the normalized and joint modes: a center where
/// `Φ_n(x̂,x̂)` falls below it lies outside the box the constants cover.
pub fn estimate_amplitudes(
    centers: &Points,
    u: &[f64],
    spec: &KernelSpec,
    mode: AmplitudeMode,
    min_diag: f64,
) -> Result<Vec<f64>> {
    if centers.len() != u.len() {
        return Err(SeraError::domain(format!("{} centers but {} field values", centers.len(), u.len())));
    }
    if mode == AmplitudeMode::PaperLiteral {
        return Ok(u.to_vec());
    }
    let eval = PhiEvaluator::new(*spec);
    let tables: Vec<HermiteTable> = centers.iter().map(|x| eval.table(x)).collect();
    let diag: Vec<f64> = tables.iter().map(|t| eval.eval_tables(t, t)).collect();
    for (i, &d) in diag.iter().enumerate() {
        if d < min_diag {
            return Err(SeraError::Recovery(format!(
                "center {:?} has Φ_n(x,x) = {d:.6e} < A2_hat/2 = {min_diag:.6e}; it lies outside the validity box",
                centers.get(i)
            )));
        }
    }
    match mode {
        AmplitudeMode::Normalized => Ok(u.iter().zip(&diag).map(|(v, d)| v / d).collect()),
        AmplitudeMode::Joint => {
            let l = centers.len();
            let k =
                DMatrix::from_fn(l, l, |i, j| if i == j { diag[i] } else { eval.eval_tables(&tables[i], &tables[j]) });
            let sol = k.lu().solve(&DVector::from_column_slice(u));
            sol.map(|s| s.iter().copied().collect())
                .ok_or_else(|| SeraError::Recovery("the kernel matrix at the recovered centers is singular".into()))
        }
        AmplitudeMode::PaperLiteral => unreachable!(),
    }
}

/// `v = √(c·t)`: the blur scale of the heat kernel at time `t` with diffusivity `c`.
pub fn heat_scale(c: f64, t: f64) -> Result<f64> {
    if !(c > 0.0 && t > 0.0) || !c.is_finite() || !t.is_finite() {
        return Err(SeraError::domain(format!("heat scale needs c > 0 and t > 0, got c={c}, t={t}")));
    }
    Ok((c * t).sqrt())
}

/// Inverse of [`heat_scale`]: `t = v²/c`.
pub fn heat_time(c: f64, v: f64) -> Result<f64> {
    if !(c > 0.0 && v > 0.0) || !c.is_finite() || !v.is_finite() {
        return Err(SeraError::domain(format!("heat time needs c > 0 and v > 0, got c={c}, v={v}")));
    }
    Ok(v * v / c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SufficiencyItem {
    pub name: String,
    pub value: f64,
    pub required: f64,
    pub holds: bool,
}

/// The largeness conditions on `n` and `N`, evaluated with the measured constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SufficiencyReport {
    pub items: Vec<SufficiencyItem>,
    /// `ε̂ = E + 2^S A₁M/(nη)^S + 2MC₁γ/n^{q+1}` with `E` the residual level.
    pub epsilon: f64,
    /// `2^S A₁M/(nη)^S`.
    pub epsilon_proxy: f64,
    pub holds: bool,
}

fn sufficiency(
    c: &RecoveryConstants,
    n: f64,
    q: usize,
    eta: f64,
    n_required: f64,
    n_used: f64,
    residual: f64,
) -> SufficiencyReport {
    let s = c.s as i32;
    let gamma = c.gamma_hat;
    let need_n =
        |name: &str, required: f64| SufficiencyItem { name: name.into(), value: n, required, holds: n >= required };
    let proxy = 2f64.powi(s) * c.a1_hat * c.m_hat / (n * eta).powi(s);
    let epsilon = residual + proxy + 2.0 * c.m_hat * c.c1_hat * gamma / n.powi(q as i32 + 1);
    let mut items = vec![
        need_n("n >= 4*gamma/eta", 4.0 * gamma / eta),
        need_n("n >= 2*B/C", 2.0 * c.b_hat / c.c_hat),
        need_n("n >= 4*gamma/sqrt(C)", 4.0 * gamma / c.c_hat.sqrt()),
        need_n("n >= (A2/(4*C1*gamma))^(1/(q+1))", (c.a2_hat / (4.0 * c.c1_hat * gamma)).powf(1.0 / (q as f64 + 1.0))),
        SufficiencyItem {
            name: "N >= max(1, 2*gamma/alpha)*n".into(),
            value: n_used,
            required: n_required,
            holds: n_used >= n_required * (1.0 - 1e-12),
        },
        SufficiencyItem {
            name: "epsilon <= mu*A2/4".into(),
            value: epsilon,
            required: c.mu * c.a2_hat / 4.0,
            holds: epsilon <= c.mu * c.a2_hat / 4.0,
        },
    ];
    items.retain(|i| i.required.is_finite());
    let holds = items.iter().all(|i| i.holds);
    SufficiencyReport { items, epsilon, epsilon_proxy: proxy, holds }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    /// `max |U_n − Σ c_ℓ Φ_n(·, x̂_ℓ)|` at grid points at least `η` from every center.
    pub residual_level: f64,
    /// `A₂μ/16`.
    pub bound: f64,
    /// `A₁·‖τ_c‖` when a clutter bound was supplied.
    pub clutter_effect: Option<f64>,
    pub reliable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub n: f64,
    pub n_required: f64,
    pub n_used: f64,
    /// Largest level the quadrature weights integrate exactly.
    pub weights_max_level: f64,
    /// Largest level the operator evaluates reliably in double precision.
    pub precision_max_level: f64,
    pub capped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub spacing: f64,
    pub half_side: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub constants: RecoveryConstants,
    pub kernel: KernelConstants,
    pub levels: LevelReport,
    pub grid: GridReport,
    pub threshold: f64,
    pub above_threshold: usize,
    pub clusters: ClusterReport,
    /// `2γ̂/N`.
    pub localization_radius: f64,
    /// `α̂/n`.
    pub alpha_radius: f64,
    pub field_at_centers: Vec<f64>,
    pub phi_diag_at_centers: Vec<f64>,
    pub sufficiency: SufficiencyReport,
    pub noise: NoiseReport,
    pub amplitude_mode: AmplitudeMode,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveredSpikes {
    pub count: usize,
    pub centers: Vec<Vec<f64>>,
    pub amplitudes: Vec<f64>,
    pub scale_v: f64,
    pub frame: Frame,
    pub diagnostics: Option<Box<Diagnostics>>,
}

impl RecoveredSpikes {
    /// Smallest pairwise Euclidean distance between centers.
    pub fn min_separation(&self) -> Option<f64> {
        let c = &self.centers;
        (0..c.len()).flat_map(|i| (i + 1..c.len()).map(move |j| euclid_dist(&c[i], &c[j]))).reduce(f64::min)
    }
}

/// Maps scaled-frame spikes to original coordinates.
pub fn rescale(spikes: &RecoveredSpikes, v: f64, mode: RescaleMode) -> Result<RecoveredSpikes> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(SeraError::domain(format!("scale v must be positive, got {v}")));
    }
    if spikes.frame != Frame::Scaled {
        return Err(SeraError::domain("spikes are already in original coordinates"));
    }
    let q = spikes.centers.first().map_or(0, Vec::len) as f64;
    let (factor, amp) = match mode {
        RescaleMode::Derived => (2.0 * v, 1.0),
        RescaleMode::RemarkLiteral => (v, (std::f64::consts::PI * v * v).powf(q / 2.0)),
    };
    Ok(RecoveredSpikes {
        count: spikes.count,
        centers: spikes.centers.iter().map(|c| c.iter().map(|x| x * factor).collect()).collect(),
        amplitudes: spikes.amplitudes.iter().map(|a| a * amp).collect(),
        scale_v: v,
        frame: Frame::Original,
        diagnostics: spikes.diagnostics.clone(),
    })
}

/// Spikes together with the fields they were read from.
#[derive(Debug, Clone)]
pub struct RecoveryOutcome {
    pub spikes: RecoveredSpikes,
    pub coarse: FieldValues,
    pub fine: FieldValues,
}

type GridKey = (u64, u64, u64);

/// Recovery driver bound to one quadrature measure.
///
/// Operators and evaluation grids are cached by level, so independent data
/// frames share them; [`Sera::recover_many`] runs frames concurrently.
pub struct Sera {
    qm: Arc<QuadratureMeasure>,
    params: RecoveryParams,
    spec: KernelSpec,
    kernel: KernelConstants,
    weights_max_level: f64,
    precision_max_level: f64,
    operators: Mutex<HashMap<(GridKey, u64), Arc<OperatorMatrix>>>,
    grids: Mutex<HashMap<GridKey, Arc<EvaluationGrid>>>,
}

/// Largest `N` with `2(⌈N²⌉ − 1) ≤ budget`.
fn max_supported_level(budget: u32) -> f64 {
    ((budget / 2 + 1) as f64).sqrt()
}

/// Largest level whose `Φ*` amplification stays within [`AMPLIFICATION_LIMIT`].
pub fn precision_max_level(spec: &KernelSpec) -> f64 {
    let amp = |n: f64| spec.at_level(n).map_or(f64::INFINITY, |s| s.phi_star_amplification());
    let (mut lo, mut hi) = (spec.n.min(1.0), 64.0);
    if amp(lo) > AMPLIFICATION_LIMIT {
        return lo;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if amp(mid) <= AMPLIFICATION_LIMIT {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

impl Sera {
    pub fn new(qm: Arc<QuadratureMeasure>, params: RecoveryParams) -> Result<Self> {
        params.validate()?;
        if (qm.a - SERO_BOX_A).abs() > 1e-12 {
            return Err(SeraError::domain(format!("recovery needs weights for A = 2/√3, got A = {}", qm.a)));
        }
        let spec = params.kernel(qm.dim())?;
        if !qm.supports_level(params.n) {
            return Err(SeraError::domain(format!(
                "weights with degree budget {} do not support level n = {}",
                qm.degree_budget, params.n
            )));
        }
        let kernel = estimate_kernel_constants(&spec, params.constants_box_radius())?;
        let weights_max_level = max_supported_level(qm.degree_budget);
        let precision_max_level = precision_max_level(&spec);
        if precision_max_level < params.n {
            return Err(SeraError::domain(format!(
                "level n = {} exceeds the double-precision limit {precision_max_level:.3} of the recovery operator",
                params.n
            )));
        }
        Ok(Sera {
            qm,
            params,
            spec,
            kernel,
            weights_max_level,
            precision_max_level,
            operators: Mutex::default(),
            grids: Mutex::default(),
        })
    }

    pub fn params(&self) -> &RecoveryParams {
        &self.params
    }

    pub fn kernel_constants(&self) -> &KernelConstants {
        &self.kernel
    }

    pub fn quadrature(&self) -> &QuadratureMeasure {
        &self.qm
    }

    fn grid(&self, level: f64, spacing: f64, half: f64) -> Result<Arc<EvaluationGrid>> {
        let key = (level.to_bits(), spacing.to_bits(), half.to_bits());
        if let Some(g) = self.grids.lock().expect("grid cache").get(&key) {
            return Ok(Arc::clone(g));
        }
        let g = Arc::new(build_grid_with_half_side(level, self.spec.q, spacing, half)?);
        Ok(Arc::clone(self.grids.lock().expect("grid cache").entry(key).or_insert(g)))
    }

    fn operator(&self, grid: &Arc<EvaluationGrid>, key: GridKey, level: f64) -> Result<Arc<OperatorMatrix>> {
        let k = (key, level.to_bits());
        if let Some(op) = self.operators.lock().expect("operator cache").get(&k) {
            return Ok(Arc::clone(op));
        }
        let op = Arc::new(assemble_operator(&self.qm, Arc::clone(grid), &self.spec.at_level(level)?)?);
        Ok(Arc::clone(self.operators.lock().expect("operator cache").entry(k).or_insert(op)))
    }

    /// Evaluation grid and operators at levels `n` and `N`.
    fn stage(&self, n_used: f64, alpha: f64) -> Result<(Arc<OperatorMatrix>, Arc<OperatorMatrix>)> {
        let spacing = self.params.grid_spacing.unwrap_or_else(|| default_spacing(alpha, n_used));
        let half = self.params.window.unwrap_or_else(|| grid_half_side(n_used));
        let key = (n_used.to_bits(), spacing.to_bits(), half.to_bits());
        let grid = self.grid(n_used, spacing, half)?;
        let fine = self.operator(&grid, key, n_used)?;
        let coarse =
            if n_used == self.params.n { Arc::clone(&fine) } else { self.operator(&grid, key, self.params.n)? };
        Ok((coarse, fine))
    }

    fn check_data(&self, data: &[f64]) -> Result<()> {
        if data.len() != self.qm.len() {
            return Err(SeraError::domain(format!(
                "{} data values for {} quadrature points",
                data.len(),
                self.qm.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(SeraError::domain(format!("data value {i} is not finite")));
        }
        Ok(())
    }

    /// Mass estimate `Σ|â|` from a single-level pass at `n`.
    fn bootstrap_mass(&self, data: &[f64]) -> Result<f64> {
        let c = RecoveryConstants::from_kernel(&self.kernel, self.params.mu, self.params.mu, "minimum")?;
        let (coarse, _) = self.stage(self.params.n, c.alpha_hat)?;
        let field = coarse.apply(data)?;
        let members = threshold_field(&field, &c, self.params.mu);
        let clusters = cluster(&field.grid.points, &members, self.params.eta)?;
        let peaks = locate_peaks(&clusters, &field)?;
        let centers = field.grid.points.select(&peaks);
        let u: Vec<f64> = peaks.iter().map(|&i| field.values[i]).collect();
        let amps = estimate_amplitudes(&centers, &u, &self.spec, AmplitudeMode::Normalized, 0.0)?;
        Ok(amps.iter().map(|a| a.abs()).sum::<f64>().max(self.params.mu))
    }

    /// Full pipeline for one data vector given on the quadrature points.
    pub fn recover_detailed(&self, data: &[f64]) -> Result<RecoveryOutcome> {
        self.check_data(data)?;
        let p = &self.params;
        let k = &self.kernel;
        let q = self.spec.q;
        let mut warnings = Vec::new();

        let (m_hat, source) = match p.m_hint {
            Some(m) => (m, "hint"),
            None => (self.bootstrap_mass(data)?, "bootstrap"),
        };
        let mut constants = RecoveryConstants::from_kernel(k, m_hat, p.mu, source)?;

        let n_required = p.rho.max(2.0 * constants.gamma_hat / constants.alpha_hat).max(1.0) * p.n;
        let cap = p.max_level.unwrap_or(f64::INFINITY).min(self.weights_max_level).min(self.precision_max_level);
        let n_used = n_required.min(cap).max(p.n);
        let capped = n_used < n_required;
        if capped {
            warnings.push(format!(
                "fine level N = {n_used:.4} is below the required {n_required:.4}; localization is asserted at 2γ̂/N with the used N"
            ));
        }

        let (coarse_op, fine_op) = self.stage(n_used, constants.alpha_hat)?;
        let fine = fine_op.apply(data)?;
        let coarse = if Arc::ptr_eq(&coarse_op, &fine_op) { fine.clone() } else { coarse_op.apply(data)? };
        let points = &fine.grid.points;

        let members = threshold_field(&fine, &constants, p.mu);
        if members.is_empty() {
            warnings.push("no grid point reaches the threshold; zero spikes recovered".into());
        }
        let clusters = cluster(points, &members, p.eta)?;
        let localization_radius = 2.0 * constants.gamma_hat / n_used;
        let report = validate_clusters(points, &clusters, localization_radius, p.eta).into_result()?;

        let peaks = locate_peaks(&clusters, &coarse)?;
        let centers = points.select(&peaks);
        let u: Vec<f64> = peaks.iter().map(|&i| coarse.values[i]).collect();
        let amplitudes = estimate_amplitudes(&centers, &u, &self.spec, p.amplitude_mode, constants.a2_hat / 2.0)?;
        let eval = PhiEvaluator::new(self.spec);
        let phi_diag: Vec<f64> = centers.iter().map(|x| eval.eval(x, x)).collect();
        if let Some(b) = centers.iter().map(|c| c.iter().fold(0.0f64, |m, v| m.max(v.abs()))).reduce(f64::max) {
            constants.b_hat = b;
        }

        let noise = self.noise_report(&coarse, &centers, &u, &constants);
        if !noise.reliable {
            warnings.push(format!(
                "estimated clutter level {:.3e} exceeds A2_hat·mu/16 = {:.3e}; the result may be unreliable",
                noise.clutter_effect.unwrap_or(noise.residual_level),
                noise.bound
            ));
        }
        let sufficiency = sufficiency(&constants, p.n, q, p.eta, n_required, n_used, noise.residual_level);

        let mut order: Vec<usize> = (0..centers.len()).collect();
        order.sort_by(|&a, &b| lex_cmp(centers.get(a), centers.get(b)));
        let diagnostics = Diagnostics {
            threshold: constants.threshold(),
            above_threshold: members.len(),
            kernel: k.clone(),
            levels: LevelReport {
                n: p.n,
                n_required,
                n_used,
                weights_max_level: self.weights_max_level,
                precision_max_level: self.precision_max_level,
                capped,
            },
            grid: GridReport {
                spacing: fine.grid.spacing,
                half_side: *fine.grid.axis.last().expect("axis"),
                points: fine.grid.len(),
            },
            clusters: report,
            localization_radius,
            alpha_radius: constants.alpha_hat / p.n,
            field_at_centers: order.iter().map(|&i| u[i]).collect(),
            phi_diag_at_centers: order.iter().map(|&i| phi_diag[i]).collect(),
            sufficiency,
            noise,
            amplitude_mode: p.amplitude_mode,
            warnings,
            constants,
        };
        let spikes = RecoveredSpikes {
            count: centers.len(),
            centers: order.iter().map(|&i| centers.get(i).to_vec()).collect(),
            amplitudes: order.iter().map(|&i| amplitudes[i]).collect(),
            scale_v: p.v,
            frame: Frame::Scaled,
            diagnostics: Some(Box::new(diagnostics)),
        };
        Ok(RecoveryOutcome { spikes, coarse, fine })
    }

    pub fn recover(&self, data: &[f64]) -> Result<RecoveredSpikes> {
        Ok(self.recover_detailed(data)?.spikes)
    }

    /// Recovers several frames concurrently against the shared operators.
    pub fn recover_many(&self, frames: &[Vec<f64>]) -> Result<Vec<RecoveredSpikes>> {
        frames.par_iter().map(|d| self.recover(d)).collect()
    }

    fn noise_report(&self, coarse: &FieldValues, centers: &Points, u: &[f64], c: &RecoveryConstants) -> NoiseReport {
        let bound = c.a2_hat * c.mu / 16.0;
        let eval = PhiEvaluator::new(self.spec);
        let coef = if centers.is_empty() {
            Vec::new()
        } else {
            estimate_amplitudes(centers, u, &self.spec, AmplitudeMode::Joint, 0.0)
                .unwrap_or_else(|_| vec![0.0; u.len()])
        };
        let center_tables: Vec<HermiteTable> = centers.iter().map(|x| eval.table(x)).collect();
        let far = self.params.eta;
        let residual_level = (0..coarse.len())
            .into_par_iter()
            .filter(|&i| centers.iter().all(|x| euclid_dist(coarse.point(i), x) >= far))
            .map(|i| {
                let t = eval.table(coarse.point(i));
                let model: f64 = center_tables.iter().zip(&coef).map(|(ct, a)| a * eval.eval_tables(&t, ct)).sum();
                (coarse.values[i] - model).abs()
            })
            .reduce(|| 0.0, f64::max);
        let clutter_effect = self.params.clutter_bound.map(|b| c.a1_hat * b);
        let reliable = clutter_effect.map_or(residual_level <= bound, |e| e <= bound);
        NoiseReport { residual_level, bound, clutter_effect, reliable }
    }
}

/// One-shot recovery: builds a [`Sera`] and runs it on `data`.
pub fn recover(data: &[f64], qm: Arc<QuadratureMeasure>, params: &RecoveryParams) -> Result<RecoveredSpikes> {
    Sera::new(qm, params.clone())?.recover(data)
}

/// Exponents and coefficients of `f(y) = Σ b_ℓ exp(2 y_ℓ·y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpSumRecovery {
    pub count: usize,
    pub exponents: Vec<Vec<f64>>,
    pub coefficients: Vec<f64>,
    pub spikes: RecoveredSpikes,
}

/// `𝔾(x) = π^{q/2} e^{-|x|²} f(x)`.
pub fn exp_sum_to_model(points: &Points, f: &[f64]) -> Result<Vec<f64>> {
    if points.len() != f.len() {
        return Err(SeraError::domain(format!("{} points but {} values", points.len(), f.len())));
    }
    let c = std::f64::consts::PI.powf(points.dim() as f64 / 2.0);
    let g: Vec<f64> = points.iter().zip(f).map(|(x, v)| c * (-sq_norm(x)).exp() * v).collect();
    let bad: Vec<String> = points
        .iter()
        .zip(f.iter().zip(&g))
        .filter(|(_, (v, g))| !v.is_finite() || !g.is_finite())
        .map(|(x, _)| format!("{x:?}"))
        .collect();
    if !bad.is_empty() {
        return Err(SeraError::domain(format!(
            "exponential sum values overflow at {} point(s): {}",
            bad.len(),
            bad.iter().take(10).cloned().collect::<Vec<_>>().join(", ")
        )));
    }
    Ok(g)
}

/// Recovers exponents and coefficients from values of `f` on the quadrature points.
pub fn separate_exponential_sum(sera: &Sera, f: &[f64]) -> Result<ExpSumRecovery> {
    let g = exp_sum_to_model(&sera.quadrature().points, f)?;
    let spikes = sera.recover(&g)?;
    let q = sera.quadrature().dim() as f64;
    let c = std::f64::consts::PI.powf(-q / 2.0);
    let coefficients =
        spikes.centers.iter().zip(&spikes.amplitudes).map(|(y, a)| c * (-sq_norm(y)).exp() * a).collect();
    Ok(ExpSumRecovery { count: spikes.count, exponents: spikes.centers.clone(), coefficients, spikes })
}
