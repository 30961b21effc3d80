use std::io::{BufRead, Write};

use super::{DenseMatrix, LinalgError};

/// Compressed-row sparse matrix. Column indices are strictly increasing
/// within each row. Symmetric matrices are stored with both triangles.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets<I>(n_rows: usize, n_cols: usize, triplets: I) -> Result<Self, LinalgError>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut t: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(i, j, _) in &t {
            if i >= n_rows {
                return Err(LinalgError::IndexOutOfRange { index: i, dim: n_rows });
            }
            if j >= n_cols {
                return Err(LinalgError::IndexOutOfRange { index: j, dim: n_cols });
            }
        }
        t.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(t.len());
        let mut values: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in t {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// As [`Self::from_triplets`], then verifies `value(i,j) == value(j,i)`.
    pub fn from_triplets_symmetric<I>(n: usize, triplets: I) -> Result<Self, LinalgError>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let m = Self::from_triplets(n, n, triplets)?;
        m.check_symmetric(0.0)?;
        Ok(m)
    }

    /// Validates raw CSR arrays.
    pub fn from_csr(
        n_rows: usize,
        n_cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self, LinalgError> {
        if row_ptr.len() != n_rows + 1 || row_ptr[0] != 0 {
            return Err(LinalgError::InvalidStructure("row offsets malformed".into()));
        }
        if row_ptr.windows(2).any(|w| w[0] > w[1]) {
            return Err(LinalgError::InvalidStructure("row offsets not monotone".into()));
        }
        let nnz = row_ptr[n_rows];
        if col_idx.len() != nnz || values.len() != nnz {
            return Err(LinalgError::InvalidStructure(format!(
                "expected {nnz} entries, got {} indices and {} values",
                col_idx.len(),
                values.len()
            )));
        }
        for i in 0..n_rows {
            let cols = &col_idx[row_ptr[i]..row_ptr[i + 1]];
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(LinalgError::InvalidStructure(format!(
                    "column indices not strictly increasing in row {i}"
                )));
            }
            if let Some(&c) = cols.last() {
                if c >= n_cols {
                    return Err(LinalgError::IndexOutOfRange { index: c, dim: n_cols });
                }
            }
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let n = d.len();
        Self {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: d.to_vec(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map_or(0.0, |k| vals[k])
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let mut out = vec![0.0; self.n_rows];
        self.spmv_into(x, &mut out)?;
        Ok(out)
    }

    pub fn spmv_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), LinalgError> {
        if x.len() != self.n_cols {
            return Err(LinalgError::DimensionMismatch {
                context: "SparseMatrix::spmv",
                expected: self.n_cols,
                found: x.len(),
            });
        }
        if out.len() != self.n_rows {
            return Err(LinalgError::DimensionMismatch {
                context: "SparseMatrix::spmv output",
                expected: self.n_rows,
                found: out.len(),
            });
        }
        for (i, o) in out.iter_mut().enumerate() {
            let r = self.row_ptr[i]..self.row_ptr[i + 1];
            let mut acc = 0.0;
            for (&j, &v) in self.col_idx[r.clone()].iter().zip(&self.values[r]) {
                acc += v * x[j];
            }
            *o = acc;
        }
        Ok(())
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                d[(i, j)] = v;
            }
        }
        d
    }

    pub fn transpose(&self) -> SparseMatrix {
        let t = (0..self.n_rows).flat_map(|i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (j, i, v))
        });
        Self::from_triplets(self.n_cols, self.n_rows, t).expect("indices already validated")
    }

    pub fn check_symmetric(&self, tol: f64) -> Result<(), LinalgError> {
        if self.n_rows != self.n_cols {
            return Err(LinalgError::DimensionMismatch {
                context: "SparseMatrix::check_symmetric",
                expected: self.n_rows,
                found: self.n_cols,
            });
        }
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if (v - self.get(j, i)).abs() > tol {
                    return Err(LinalgError::NotSymmetric { row: i, col: j });
                }
            }
        }
        Ok(())
    }

    /// Sparse product `self * other`.
    pub fn matmul(&self, other: &SparseMatrix) -> Result<SparseMatrix, LinalgError> {
        if self.n_cols != other.n_rows {
            return Err(LinalgError::DimensionMismatch {
                context: "SparseMatrix::matmul",
                expected: self.n_cols,
                found: other.n_rows,
            });
        }
        let mut trip = Vec::new();
        let mut acc = vec![0.0; other.n_cols];
        let mut marked = vec![false; other.n_cols];
        let mut touched = Vec::new();
        for i in 0..self.n_rows {
            let (ac, av) = self.row(i);
            for (&k, &a) in ac.iter().zip(av) {
                let (bc, bv) = other.row(k);
                for (&j, &b) in bc.iter().zip(bv) {
                    if !marked[j] {
                        marked[j] = true;
                        touched.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            for &j in &touched {
                trip.push((i, j, acc[j]));
                acc[j] = 0.0;
                marked[j] = false;
            }
            touched.clear();
        }
        Self::from_triplets(self.n_rows, other.n_cols, trip)
    }

    /// Plain-text triplet export: header `rows cols nnz`, then `i j value`
    /// lines with 0-based indices.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> Result<(), LinalgError> {
        writeln!(w, "{} {} {}", self.n_rows, self.n_cols, self.nnz())?;
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                writeln!(w, "{i} {j} {v:e}")?;
            }
        }
        Ok(())
    }

    pub fn read_triplets<R: BufRead>(r: R) -> Result<SparseMatrix, LinalgError> {
        let mut lines = r
            .lines()
            .map(|l| l.map_err(LinalgError::from))
            .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty() && !s.starts_with('%')));
        let header = lines
            .next()
            .ok_or_else(|| LinalgError::Parse("missing header".into()))??;
        let h: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| LinalgError::Parse(format!("bad header `{header}`"))))
            .collect::<Result<_, _>>()?;
        if h.len() != 3 {
            return Err(LinalgError::Parse(format!("bad header `{header}`")));
        }
        let (rows, cols, nnz) = (h[0], h[1], h[2]);
        let mut trip = Vec::with_capacity(nnz);
        for line in lines {
            let line = line?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(LinalgError::Parse(format!("bad entry `{line}`")));
            }
            let bad = || LinalgError::Parse(format!("bad entry `{line}`"));
            let i: usize = parts[0].parse().map_err(|_| bad())?;
            let j: usize = parts[1].parse().map_err(|_| bad())?;
            let v: f64 = parts[2].parse().map_err(|_| bad())?;
            trip.push((i, j, v));
        }
        if trip.len() != nnz {
            return Err(LinalgError::Parse(format!(
                "header announces {nnz} entries, found {}",
                trip.len()
            )));
        }
        Self::from_triplets(rows, cols, trip)
    }
}
