//! Flat storage for sets of points in `R^q`.

use serde::{Deserialize, Serialize};

use crate::{Result, SeraError};

/// A list of `q`-dimensional points stored contiguously.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Points {
    dim: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(SeraError::domain("point dimension must be at least 1"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(SeraError::domain(format!(
                "coordinate buffer of length {} is not a multiple of dimension {}",
                data.len(),
                dim
            )));
        }
        Ok(Points { dim, data })
    }

    pub fn empty(dim: usize) -> Self {
        Points { dim, data: Vec::new() }
    }

    pub fn from_rows(dim: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(SeraError::domain(format!("point {} has dimension {}, expected {}", i, r.len(), dim)));
            }
            data.extend_from_slice(r);
        }
        Ok(Points { dim, data })
    }

    /// One-dimensional points from a slice of scalars.
    pub fn from_scalars(xs: &[f64]) -> Self {
        Points { dim: 1, data: xs.to_vec() }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn push(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.dim, "pushed point has the wrong dimension");
        self.data.extend_from_slice(p);
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.iter().map(|p| p.to_vec()).collect()
    }

    /// Every coordinate multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Points {
        Points { dim: self.dim, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn select(&self, idx: &[usize]) -> Points {
        let mut out = Points::empty(self.dim);
        for &i in idx {
            out.push(self.get(i));
        }
        out
    }
}

pub fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn euclid_dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn sq_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Lexicographic comparison of coordinate tuples.
pub fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    std::cmp::Ordering::Equal
}
