//! Dense Cholesky factorization `M = L L^T` on tiled lower-triangular storage.
//!
//! Only the tiles on or below the diagonal are allocated, so a matrix of
//! order `n` costs about `n^2 / 2` doubles. The factorization is the
//! right-looking tile algorithm: factor the diagonal tile, solve the panel
//! below it, then apply the rank-`nb` update to the trailing tiles with GEMM.
//! The last tile row and column are padded with an identity block, which
//! leaves the factor and its determinant unchanged.

use super::{dot, record_factorization, DenseMatrix, LinalgError, SparseMatrix};

const TILE: usize = 128;

/// Lower-triangular Cholesky factor with its log-determinant.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    n: usize,
    nb: usize,
    nt: usize,
    tiles: Vec<Vec<f64>>,
    log_det: f64,
}

#[inline]
fn tid(i: usize, j: usize) -> usize {
    debug_assert!(j <= i);
    i * (i + 1) / 2 + j
}

/// Factorizes a symmetric positive definite dense matrix. Only the lower
/// triangle of `m` is read.
pub fn cholesky(m: &DenseMatrix) -> Result<CholeskyFactor, LinalgError> {
    if m.rows() != m.cols() {
        return Err(LinalgError::DimensionMismatch {
            context: "cholesky",
            expected: m.rows(),
            found: m.cols(),
        });
    }
    let mut f = CholeskyFactor::allocate(m.rows());
    for i in 0..m.rows() {
        for (j, &v) in m.row(i)[..=i].iter().enumerate() {
            f.set_input(i, j, v);
        }
    }
    f.factorize()?;
    Ok(f)
}

/// Factorizes a symmetric positive definite sparse matrix densely (no
/// reordering, no fill reduction). Only the lower triangle is read.
pub fn cholesky_sparse(m: &SparseMatrix) -> Result<CholeskyFactor, LinalgError> {
    if m.n_rows() != m.n_cols() {
        return Err(LinalgError::DimensionMismatch {
            context: "cholesky_sparse",
            expected: m.n_rows(),
            found: m.n_cols(),
        });
    }
    let mut f = CholeskyFactor::allocate(m.n_rows());
    for i in 0..m.n_rows() {
        let (cols, vals) = m.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            if j <= i {
                f.set_input(i, j, v);
            }
        }
    }
    f.factorize()?;
    Ok(f)
}

impl CholeskyFactor {
    fn allocate(n: usize) -> Self {
        let nb = TILE.min(n.max(1));
        let nt = n.div_ceil(nb).max(1);
        let mut tiles = Vec::with_capacity(nt * (nt + 1) / 2);
        for i in 0..nt {
            for _ in 0..=i {
                tiles.push(vec![0.0; nb * nb]);
            }
        }
        let mut f = Self {
            n,
            nb,
            nt,
            tiles,
            log_det: 0.0,
        };
        for p in n..nt * nb {
            f.set_input(p, p, 1.0);
        }
        f
    }

    #[inline]
    fn set_input(&mut self, i: usize, j: usize, v: f64) {
        let nb = self.nb;
        self.tiles[tid(i / nb, j / nb)][(i % nb) * nb + j % nb] = v;
    }

    fn factorize(&mut self) -> Result<(), LinalgError> {
        record_factorization();
        let (nb, nt) = (self.nb, self.nt);
        for k in 0..nt {
            let kk = tid(k, k);
            potrf_tile(&mut self.tiles[kk], nb).map_err(|(local, value)| {
                LinalgError::NotPositiveDefinite {
                    pivot: k * nb + local,
                    value,
                }
            })?;
            let diag = std::mem::take(&mut self.tiles[kk]);
            for i in k + 1..nt {
                trsm_tile(&diag, &mut self.tiles[tid(i, k)], nb);
            }
            self.tiles[kk] = diag;
            for j in k + 1..nt {
                for i in j..nt {
                    let mut target = std::mem::take(&mut self.tiles[tid(i, j)]);
                    let a = &self.tiles[tid(i, k)];
                    let b = &self.tiles[tid(j, k)];
                    // target -= a * b^T
                    // SAFETY: the three tiles are distinct nb x nb row-major buffers.
                    unsafe {
                        matrixmultiply::dgemm(
                            nb,
                            nb,
                            nb,
                            -1.0,
                            a.as_ptr(),
                            nb as isize,
                            1,
                            b.as_ptr(),
                            1,
                            nb as isize,
                            1.0,
                            target.as_mut_ptr(),
                            nb as isize,
                            1,
                        );
                    }
                    self.tiles[tid(i, j)] = target;
                }
            }
        }
        // clear scratch written above the diagonal of diagonal tiles
        for k in 0..nt {
            let t = &mut self.tiles[tid(k, k)];
            for r in 0..nb {
                for c in r + 1..nb {
                    t[r * nb + c] = 0.0;
                }
            }
        }
        self.log_det = 2.0 * (0..self.n).map(|i| self.l(i, i).ln()).sum::<f64>();
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `log det M = 2 sum_i log L_ii`.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Entry `L[i][j]` (zero above the diagonal).
    pub fn l(&self, i: usize, j: usize) -> f64 {
        if j > i {
            return 0.0;
        }
        let nb = self.nb;
        self.tiles[tid(i / nb, j / nb)][(i % nb) * nb + j % nb]
    }

    pub fn to_lower_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for j in 0..=i {
                d[(i, j)] = self.l(i, j);
            }
        }
        d
    }

    fn check_len(&self, len: usize, context: &'static str) -> Result<(), LinalgError> {
        if len != self.n {
            return Err(LinalgError::DimensionMismatch {
                context,
                expected: self.n,
                found: len,
            });
        }
        Ok(())
    }

    /// Solves `L x = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        self.check_len(b.len(), "CholeskyFactor::solve_lower")?;
        let (nb, nt) = (self.nb, self.nt);
        let mut x = b.to_vec();
        x.resize(nt * nb, 0.0);
        for bi in 0..nt {
            let (done, rest) = x.split_at_mut(bi * nb);
            let xb = &mut rest[..nb];
            for bj in 0..bi {
                let t = &self.tiles[tid(bi, bj)];
                let xj = &done[bj * nb..(bj + 1) * nb];
                for r in 0..nb {
                    xb[r] -= dot(&t[r * nb..(r + 1) * nb], xj);
                }
            }
            let d = &self.tiles[tid(bi, bi)];
            for r in 0..nb {
                let s = xb[r] - dot(&d[r * nb..r * nb + r], &xb[..r]);
                xb[r] = s / d[r * nb + r];
            }
        }
        x.truncate(self.n);
        Ok(x)
    }

    /// Solves `L^T x = b`.
    pub fn solve_upper(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        self.check_len(b.len(), "CholeskyFactor::solve_upper")?;
        let (nb, nt) = (self.nb, self.nt);
        let mut x = b.to_vec();
        x.resize(nt * nb, 0.0);
        for bi in (0..nt).rev() {
            let (head, done) = x.split_at_mut((bi + 1) * nb);
            let xb = &mut head[bi * nb..];
            // xb -= sum_{bj > bi} T(bj, bi)^T x_bj
            for bj in bi + 1..nt {
                let t = &self.tiles[tid(bj, bi)];
                let xj = &done[(bj - bi - 1) * nb..(bj - bi) * nb];
                for (r, &xr) in xj.iter().enumerate() {
                    if xr != 0.0 {
                        super::axpy(-xr, &t[r * nb..(r + 1) * nb], xb);
                    }
                }
            }
            let d = &self.tiles[tid(bi, bi)];
            for r in (0..nb).rev() {
                let v = xb[r] / d[r * nb + r];
                xb[r] = v;
                if v != 0.0 {
                    super::axpy(-v, &d[r * nb..r * nb + r], &mut xb[..r]);
                }
            }
        }
        x.truncate(self.n);
        Ok(x)
    }

    /// Solves `M x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let y = self.solve_lower(b)?;
        self.solve_upper(&y)
    }

    /// Solves `L X = B` in place for a row-major `n x r` right-hand side.
    pub fn solve_lower_multi(&self, b: &mut DenseMatrix) -> Result<(), LinalgError> {
        self.check_len(b.rows(), "CholeskyFactor::solve_lower_multi")?;
        let (nb, nt, n) = (self.nb, self.nt, self.n);
        let r = b.cols();
        if r == 0 {
            return Ok(());
        }
        let mut x = vec![0.0; nt * nb * r];
        x[..n * r].copy_from_slice(b.data());
        for bi in 0..nt {
            let (done, rest) = x.split_at_mut(bi * nb * r);
            let xb = &mut rest[..nb * r];
            for bj in 0..bi {
                let t = &self.tiles[tid(bi, bj)];
                let xj = &done[bj * nb * r..(bj + 1) * nb * r];
                // SAFETY: t is nb x nb, xj is nb x r, xb is nb x r; all row-major.
                unsafe {
                    matrixmultiply::dgemm(
                        nb,
                        nb,
                        r,
                        -1.0,
                        t.as_ptr(),
                        nb as isize,
                        1,
                        xj.as_ptr(),
                        r as isize,
                        1,
                        1.0,
                        xb.as_mut_ptr(),
                        r as isize,
                        1,
                    );
                }
            }
            let d = &self.tiles[tid(bi, bi)];
            for row in 0..nb {
                let (above, cur) = xb.split_at_mut(row * r);
                let cur = &mut cur[..r];
                for c in 0..row {
                    let l = d[row * nb + c];
                    if l != 0.0 {
                        super::axpy(-l, &above[c * r..(c + 1) * r], cur);
                    }
                }
                let inv = 1.0 / d[row * nb + row];
                for v in cur.iter_mut() {
                    *v *= inv;
                }
            }
        }
        b.data_mut().copy_from_slice(&x[..n * r]);
        Ok(())
    }

    /// Selected diagonal entries of `M^{-1}`, as `|L^{-1} e_j|^2`.
    pub fn inverse_diagonal(&self, indices: &[usize]) -> Result<Vec<f64>, LinalgError> {
        let mut e = DenseMatrix::zeros(self.n, indices.len());
        for (c, &j) in indices.iter().enumerate() {
            if j >= self.n {
                return Err(LinalgError::IndexOutOfRange { index: j, dim: self.n });
            }
            e[(j, c)] = 1.0;
        }
        self.solve_lower_multi(&mut e)?;
        let mut out = vec![0.0; indices.len()];
        for i in 0..self.n {
            for (o, v) in out.iter_mut().zip(e.row(i)) {
                *o += v * v;
            }
        }
        Ok(out)
    }
}

/// In-place lower Cholesky of one tile; on failure returns the local pivot
/// index and the offending value.
fn potrf_tile(a: &mut [f64], nb: usize) -> Result<(), (usize, f64)> {
    for i in 0..nb {
        for j in 0..=i {
            let s = a[i * nb + j] - dot(&a[i * nb..i * nb + j], &a[j * nb..j * nb + j]);
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return Err((i, s));
                }
                a[i * nb + i] = s.sqrt();
            } else {
                a[i * nb + j] = s / a[j * nb + j];
            }
        }
    }
    Ok(())
}

/// `x <- x L^{-T}` for a panel tile `x` and factored diagonal tile `l`.
fn trsm_tile(l: &[f64], x: &mut [f64], nb: usize) {
    for r in 0..nb {
        let row = &mut x[r * nb..(r + 1) * nb];
        for j in 0..nb {
            let s = row[j] - dot(&l[j * nb..j * nb + j], &row[..j]);
            row[j] = s / l[j * nb + j];
        }
    }
}
