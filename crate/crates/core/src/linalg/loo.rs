//! Leave-one-out conditionals for dense covariance matrices.

use super::{cholesky, dot, DenseMatrix, LinalgError};
use crate::scoring::GaussPredictive;

/// Returns `Sigma_{-i,-i}^{-1}` from `Sigma^{-1}` by a rank-two Woodbury
/// update.
///
/// With `U = [e_i, f_i]` and `V = [f_i, e_i]^T`, where `f_i` is column `i` of
/// `Sigma` with its `i`-th entry zeroed, `Sigma - U V` has row and column `i`
/// cleared except for the diagonal, so dropping row and column `i` from
///
/// ```text
/// (Sigma - U V)^{-1} = Sigma^{-1} + Sigma^{-1} U (I - V Sigma^{-1} U)^{-1} V Sigma^{-1}
/// ```
///
/// gives the inverse of the reduced matrix. Only a 2x2 system is inverted.
pub fn loo_inverse_update(
    sigma_inv: &DenseMatrix,
    sigma: &DenseMatrix,
    i: usize,
) -> Result<DenseMatrix, LinalgError> {
    let n = sigma.rows();
    for (m, ctx) in [(sigma, "loo_inverse_update: sigma"), (sigma_inv, "loo_inverse_update: sigma_inv")] {
        if m.rows() != n || m.cols() != n {
            return Err(LinalgError::DimensionMismatch {
                context: ctx,
                expected: n,
                found: m.cols(),
            });
        }
    }
    if i >= n {
        return Err(LinalgError::IndexOutOfRange { index: i, dim: n });
    }
    let mut f = sigma.column(i);
    f[i] = 0.0;
    // B = Sigma^{-1} U: columns a = Sigma^{-1} e_i, b = Sigma^{-1} f.
    let a = sigma_inv.column(i);
    let b = sigma_inv.matvec(&f)?;
    // V Sigma^{-1} U = [[f.a, f.b], [e_i.a, e_i.b]]
    let m00 = 1.0 - dot(&f, &a);
    let m01 = -dot(&f, &b);
    let m10 = -a[i];
    let m11 = 1.0 - b[i];
    let det = m00 * m11 - m01 * m10;
    let scale = m00.abs().max(m11.abs()).max(m01.abs()).max(m10.abs()).max(1.0);
    if !det.is_finite() || det.abs() <= 1e-13 * scale * scale {
        return Err(LinalgError::DegenerateLoo { index: i, det });
    }
    let (c00, c01, c10, c11) = (m11 / det, -m01 / det, -m10 / det, m00 / det);
    // V Sigma^{-1} rows are (Sigma^{-1} f)^T = b^T and (Sigma^{-1} e_i)^T = a^T.
    let keep: Vec<usize> = (0..n).filter(|&k| k != i).collect();
    let mut out = DenseMatrix::zeros(n - 1, n - 1);
    for (r, &p) in keep.iter().enumerate() {
        let u0 = a[p] * c00 + b[p] * c10;
        let u1 = a[p] * c01 + b[p] * c11;
        let src = sigma_inv.row(p);
        let dst = out.row_mut(r);
        for (c, &q) in keep.iter().enumerate() {
            dst[c] = src[q] + u0 * b[q] + u1 * a[q];
        }
    }
    Ok(out)
}

/// Exact conditional `X_i | X_{-i} = y_{-i}` for `X ~ N(mu, Sigma)`, by
/// factorizing `Sigma_{-i,-i}` directly.
pub fn conditional_gauss_dense(
    mu: &[f64],
    sigma: &DenseMatrix,
    y: &[f64],
    i: usize,
) -> Result<GaussPredictive, LinalgError> {
    let n = sigma.rows();
    if sigma.cols() != n {
        return Err(LinalgError::DimensionMismatch {
            context: "conditional_gauss_dense: sigma",
            expected: n,
            found: sigma.cols(),
        });
    }
    for (len, ctx) in [(mu.len(), "conditional_gauss_dense: mu"), (y.len(), "conditional_gauss_dense: y")] {
        if len != n {
            return Err(LinalgError::DimensionMismatch {
                context: ctx,
                expected: n,
                found: len,
            });
        }
    }
    if i >= n {
        return Err(LinalgError::IndexOutOfRange { index: i, dim: n });
    }
    let sii = sigma[(i, i)];
    let (mean, var) = if n == 1 {
        (mu[0], sii)
    } else {
        let rest = sigma.without_row_col(i);
        let keep: Vec<usize> = (0..n).filter(|&k| k != i).collect();
        let cross: Vec<f64> = keep.iter().map(|&k| sigma[(k, i)]).collect();
        let resid: Vec<f64> = keep.iter().map(|&k| y[k] - mu[k]).collect();
        let f = cholesky(&rest)?;
        let w = f.solve(&cross)?;
        (mu[i] + dot(&w, &resid), sii - dot(&w, &cross))
    };
    if !(var > 0.0) {
        return Err(LinalgError::NotPositiveDefinite { pivot: i, value: var });
    }
    GaussPredictive::new(mean, var.sqrt())
        .map_err(|_| LinalgError::NotPositiveDefinite { pivot: i, value: var })
}
