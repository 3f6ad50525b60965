//! Minimum-norm least squares through a complete orthogonal decomposition.
//!
//! `A Π = Q [R11 R12; 0 R22]` with column pivoting; the numerical rank `r` is
//! the number of diagonal entries of `R` above `rtol · |R_00|`. The leading
//! `r × n` trapezoid is then reduced from the right, `[R11 R12] Z = [T 0]`,
//! and the minimum-norm solution is `x = Π Z [T⁻¹ (Qᵀb)_{1:r}; 0]`.

use nalgebra::{DMatrix, DVector};

/// Solution of `min ‖Ax − b‖₂` with the smallest `‖x‖₂`.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub x: DVector<f64>,
    pub rank: usize,
    /// `|R_00| / |R_{r-1,r-1}|` from the pivoted triangular factor.
    pub condition_estimate: f64,
    pub residual_norm: f64,
}

/// Householder reflector `I - τ v vᵀ` with `v[0] = 1`, mapping `x` to `β e_1`.
fn householder(x: &mut [f64]) -> (f64, f64) {
    let alpha = x[0];
    let tail: f64 = x[1..].iter().map(|v| v * v).sum();
    if tail == 0.0 {
        return (0.0, alpha);
    }
    let norm = (alpha * alpha + tail).sqrt();
    let beta = if alpha >= 0.0 { -norm } else { norm };
    let scale = 1.0 / (alpha - beta);
    for v in x[1..].iter_mut() {
        *v *= scale;
    }
    x[0] = 1.0;
    ((beta - alpha) / beta, beta)
}

pub fn min_norm_lstsq(a: &DMatrix<f64>, b: &DVector<f64>, rtol: f64) -> LeastSquares {
    let (m, n) = a.shape();
    assert_eq!(b.len(), m, "right-hand side length must match the row count");
    let kmax = m.min(n);

    // Row-major working copy so that column operations touch contiguous rows
    // of the transpose: w[j] is column j of A.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j).iter().copied().collect()).collect();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut vs: Vec<(Vec<f64>, f64)> = Vec::with_capacity(kmax);
    let mut rdiag = Vec::with_capacity(kmax);

    for k in 0..kmax {
        // Pivot: largest remaining column norm over rows k..m.
        let (mut best, mut best_norm) = (k, -1.0);
        for (j, c) in cols.iter().enumerate().skip(k) {
            let s: f64 = c[k..].iter().map(|v| v * v).sum();
            if s > best_norm {
                best = j;
                best_norm = s;
            }
        }
        cols.swap(k, best);
        perm.swap(k, best);

        let mut v = cols[k][k..].to_vec();
        let (tau, beta) = householder(&mut v);
        cols[k][k] = beta;
        for e in cols[k][k + 1..].iter_mut() {
            *e = 0.0;
        }
        if tau != 0.0 {
            for c in cols.iter_mut().skip(k + 1) {
                let seg = &mut c[k..];
                let d: f64 = seg.iter().zip(&v).map(|(x, y)| x * y).sum::<f64>() * tau;
                for (x, y) in seg.iter_mut().zip(&v) {
                    *x -= d * y;
                }
            }
        }
        rdiag.push(beta);
        vs.push((v, tau));
    }

    // Qᵀ b
    let mut qtb: Vec<f64> = b.iter().copied().collect();
    for (k, (v, tau)) in vs.iter().enumerate() {
        if *tau == 0.0 {
            continue;
        }
        let seg = &mut qtb[k..];
        let d: f64 = seg.iter().zip(v).map(|(x, y)| x * y).sum::<f64>() * tau;
        for (x, y) in seg.iter_mut().zip(v) {
            *x -= d * y;
        }
    }

    let r00 = rdiag.first().map(|v: &f64| v.abs()).unwrap_or(0.0);
    let rank = rdiag.iter().take_while(|d| d.abs() > rtol * r00 && r00 > 0.0).count();
    if rank == 0 {
        let x = DVector::zeros(n);
        let residual_norm = (a * &x - b).norm();
        return LeastSquares { x, rank, condition_estimate: f64::INFINITY, residual_norm };
    }
    let condition_estimate = r00 / rdiag[rank - 1].abs();

    // Trapezoid [R11 R12] as rows: t[i][j] = R[i, j], i < rank.
    let mut t: Vec<Vec<f64>> = (0..rank).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect();
    // Right reflectors eliminating R12, row by row from the bottom. Each acts
    // on coordinates {i} ∪ {rank..n}.
    let mut zs: Vec<(usize, Vec<f64>, f64)> = Vec::new();
    if rank < n {
        for i in (0..rank).rev() {
            let mut v = Vec::with_capacity(n - rank + 1);
            v.push(t[i][i]);
            v.extend_from_slice(&t[i][rank..]);
            let (tau, beta) = householder(&mut v);
            t[i][i] = beta;
            for e in t[i][rank..].iter_mut() {
                *e = 0.0;
            }
            if tau != 0.0 {
                for row in t.iter_mut().take(i) {
                    let mut d = row[i] * v[0];
                    for (x, y) in row[rank..].iter().zip(&v[1..]) {
                        d += x * y;
                    }
                    d *= tau;
                    row[i] -= d * v[0];
                    for (x, y) in row[rank..].iter_mut().zip(&v[1..]) {
                        *x -= d * y;
                    }
                }
            }
            zs.push((i, v, tau));
        }
    }

    // Back substitution with the upper-triangular T.
    let mut y = vec![0.0; n];
    for i in (0..rank).rev() {
        let mut s = qtb[i];
        for j in i + 1..rank {
            s -= t[i][j] * y[j];
        }
        y[i] = s / t[i][i];
    }
    // x' = Z y with Z = H_{first} H_{second} ⋯; apply the last-created first.
    for (i, v, tau) in zs.iter().rev() {
        if *tau == 0.0 {
            continue;
        }
        let mut d = y[*i] * v[0];
        for (x, w) in y[rank..].iter().zip(&v[1..]) {
            d += x * w;
        }
        d *= tau;
        y[*i] -= d * v[0];
        for (x, w) in y[rank..].iter_mut().zip(&v[1..]) {
            *x -= d * w;
        }
    }
    let mut x = DVector::zeros(n);
    for (k, &p) in perm.iter().enumerate() {
        x[p] = y[k];
    }
    let residual_norm = (a * &x - b).norm();
    LeastSquares { x, rank, condition_estimate, residual_norm }
}
