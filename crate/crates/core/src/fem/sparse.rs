//! Compressed sparse row storage assembled from triplets.

use crate::error::{Error, Result};

/// Unsorted `(row, col, value)` accumulator; duplicates are summed on
/// compression.
#[derive(Clone, Debug, Default)]
pub struct Triplets {
    pub n_rows: usize,
    pub n_cols: usize,
    rows: Vec<u32>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl Triplets {
    pub fn new(n_rows: usize, n_cols: usize) -> Self {
        Triplets {
            n_rows,
            n_cols,
            ..Default::default()
        }
    }

    pub fn with_capacity(n_rows: usize, n_cols: usize, cap: usize) -> Self {
        Triplets {
            n_rows,
            n_cols,
            rows: Vec::with_capacity(cap),
            cols: Vec::with_capacity(cap),
            vals: Vec::with_capacity(cap),
        }
    }

    #[inline]
    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.n_rows && j < self.n_cols);
        self.rows.push(i as u32);
        self.cols.push(j as u32);
        self.vals.push(v);
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    pub fn to_csr(&self) -> CsrMatrix {
        let n = self.n_rows;
        let mut count = vec![0usize; n + 1];
        for &r in &self.rows {
            count[r as usize + 1] += 1;
        }
        for i in 0..n {
            count[i + 1] += count[i];
        }
        let mut pos = count.clone();
        let mut cols = vec![0u32; self.len()];
        let mut vals = vec![0.0; self.len()];
        for k in 0..self.len() {
            let r = self.rows[k] as usize;
            cols[pos[r]] = self.cols[k];
            vals[pos[r]] = self.vals[k];
            pos[r] += 1;
        }
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::with_capacity(self.len());
        let mut values = Vec::with_capacity(self.len());
        indptr.push(0);
        let mut buf: Vec<(u32, f64)> = Vec::new();
        for i in 0..n {
            buf.clear();
            buf.extend((count[i]..count[i + 1]).map(|k| (cols[k], vals[k])));
            buf.sort_unstable_by_key(|e| e.0);
            let mut last = u32::MAX;
            for &(c, v) in &buf {
                if c == last {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(c as usize);
                    values.push(v);
                    last = c;
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            n_rows: n,
            n_cols: self.n_cols,
            indptr,
            indices,
            values,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            n_rows: n,
            n_cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        let mut t = Triplets::new(n, m);
        for (i, r) in rows.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                if v != 0.0 {
                    t.push(i, j, v);
                }
            }
        }
        t.to_csr()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.indptr[i]..self.indptr[i + 1]).map(move |k| (self.indices[k], self.values[k]))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = &self.indices[self.indptr[i]..self.indptr[i + 1]];
        match r.binary_search(&j) {
            Ok(k) => self.values[self.indptr[i] + k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n_rows) {
            let mut s = 0.0;
            for k in self.indptr[i]..self.indptr[i + 1] {
                s += self.values[k] * x[self.indices[k]];
            }
            *yi = s;
        }
    }

    /// `x^T A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut s = 0.0;
        for (i, xi) in x.iter().enumerate().take(self.n_rows) {
            let mut r = 0.0;
            for k in self.indptr[i]..self.indptr[i + 1] {
                r += self.values[k] * y[self.indices[k]];
            }
            s += xi * r;
        }
        s
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut t = Triplets::with_capacity(self.n_cols, self.n_rows, self.nnz());
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                t.push(j, i, v);
            }
        }
        t.to_csr()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n_cols]; self.n_rows];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] += v;
            }
        }
        d
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    /// `diag(r) A diag(c)`.
    pub fn scaled(&self, r: &[f64], c: &[f64]) -> CsrMatrix {
        let mut out = self.clone();
        for i in 0..self.n_rows {
            for k in self.indptr[i]..self.indptr[i + 1] {
                out.values[k] *= r[i] * c[self.indices[k]];
            }
        }
        out
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, other: &CsrMatrix, s: f64) -> Result<CsrMatrix> {
        if self.n_rows != other.n_rows || self.n_cols != other.n_cols {
            return Err(Error::Dimension(format!(
                "{}x{} + {}x{}",
                self.n_rows, self.n_cols, other.n_rows, other.n_cols
            )));
        }
        let mut t = Triplets::with_capacity(self.n_rows, self.n_cols, self.nnz() + other.nnz());
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                t.push(i, j, v);
            }
            for (j, v) in other.row(i) {
                t.push(i, j, s * v);
            }
        }
        Ok(t.to_csr())
    }

    /// Submatrix on the given row and column index lists.
    pub fn restrict(&self, rows: &[usize], cols: &[usize]) -> CsrMatrix {
        let mut cmap = vec![usize::MAX; self.n_cols];
        for (k, &c) in cols.iter().enumerate() {
            cmap[c] = k;
        }
        let mut t = Triplets::new(rows.len(), cols.len());
        for (ri, &r) in rows.iter().enumerate() {
            for (j, v) in self.row(r) {
                if cmap[j] != usize::MAX {
                    t.push(ri, cmap[j], v);
                }
            }
        }
        t.to_csr()
    }

    pub fn is_pattern_symmetric(&self) -> bool {
        if self.n_rows != self.n_cols {
            return false;
        }
        let t = self.transpose();
        t.indptr == self.indptr && t.indices == self.indices
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed() {
        let mut t = Triplets::new(2, 2);
        t.push(0, 1, 1.0);
        t.push(0, 1, 2.0);
        t.push(1, 0, -1.0);
        t.push(0, 0, 4.0);
        let a = t.to_csr();
        assert_eq!(a.nnz(), 3);
        assert_eq!(a.get(0, 1), 3.0);
        assert_eq!(a.get(1, 1), 0.0);
        assert_eq!(a.matvec(&[1.0, 1.0]), vec![7.0, -1.0]);
        assert_eq!(a.transpose().get(1, 0), 3.0);
    }

    #[test]
    fn restrict_and_scale() {
        let a = CsrMatrix::from_dense(&[vec![1.0, 2.0, 0.0], vec![0.0, 3.0, 4.0], vec![5.0, 0.0, 6.0]]);
        let r = a.restrict(&[0, 2], &[0, 2]);
        assert_eq!(r.to_dense(), vec![vec![1.0, 0.0], vec![5.0, 6.0]]);
        let s = a.scaled(&[1.0, 2.0, 1.0], &[1.0, 1.0, 0.5]);
        assert_eq!(s.get(1, 2), 4.0);
        assert!(a.bilinear(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]) == 2.0);
    }
}
