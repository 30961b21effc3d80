//! Matrix kernels: compressed-row sparse matrices, row-major dense matrices,
//! a tiled dense Cholesky factorization, leave-one-out inverse updates and a
//! dense conditional-Gaussian oracle.

mod cholesky;
mod dense;
mod eigen;
mod loo;
mod sparse;

use std::sync::atomic::{AtomicU64, Ordering};

pub use cholesky::{cholesky, cholesky_sparse, CholeskyFactor};
pub use dense::DenseMatrix;
pub use eigen::symmetric_eigen;
pub use loo::{conditional_gauss_dense, loo_inverse_update};
pub use sparse::SparseMatrix;

#[derive(Debug, thiserror::Error)]
pub enum LinalgError {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("matrix is not positive definite: pivot {pivot} has value {value:e}")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("degenerate leave-one-out update at index {index}: 2x2 capacitance determinant {det:e}")]
    DegenerateLoo { index: usize, det: f64 },
    #[error("matrix is singular (no usable pivot in column {column})")]
    Singular { column: usize },
    #[error("matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },
    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("invalid sparse structure: {0}")]
    InvalidStructure(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

static FACTORIZATIONS: AtomicU64 = AtomicU64::new(0);

/// Number of Cholesky factorizations performed by this process so far.
pub fn factorization_count() -> u64 {
    FACTORIZATIONS.load(Ordering::Relaxed)
}

fn record_factorization() {
    FACTORIZATIONS.fetch_add(1, Ordering::Relaxed);
}

/// Dot product with independent accumulators so the loop vectorizes.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let chunks = n / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 8..n {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
