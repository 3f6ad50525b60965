//! Recovery of discrete point masses from finitely many scattered samples of
//! Gaussian-blurred data, and separation of real exponential sums.
//!
//! The pipeline integrates sampled data against a Hermite-expansion kernel
//! (`Φ*_n`) using a quadrature measure supported on the sample points. The
//! result approximates `Σ a_ℓ Φ_n(x, x_ℓ)`, where `Φ_n` is a localized kernel
//! peaking on the diagonal, so point masses show up as isolated bumps that are
//! found by thresholding, single-linkage clustering and a per-cluster argmax.
//!
//! Module map:
//!
//! * [`special`]: Hermite functions, multi-indices and the smooth cutoff `H`.
//! * [`kernels`]: the kernels `Φ_n`, `Φ*_n` and Mehler-formula oracles.
//! * [`quadrature`]: mesh statistics, thinning and least-norm quadrature weights.
//! * [`sero`]: evaluation grids and the precomputed operator matrix.
//! * [`recovery`]: constants, thresholding, clustering, peaks, amplitudes.
//! * [`synthesis`]: ground-truth targets, sample geometries and test data.
//! * [`io`]: CSV/JSON file formats shared with the command-line driver.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod points;
pub mod quadrature;
pub mod recovery;
pub mod sero;
pub mod special;
pub mod synthesis;
pub mod verification;

pub use error::{Result, SeraError};
pub use points::Points;

/// Box scale `A = 2/√3` used by the discretized recovery operator.
pub const SERO_BOX_A: f64 = 1.154_700_538_379_251_5;
