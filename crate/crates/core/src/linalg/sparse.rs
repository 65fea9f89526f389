//! Minimal CSR matrix, just enough for stencil Jacobians.

use crate::{Error, Result};
use ndarray::{Array1, Array2, ArrayView1};

/// Compressed sparse row matrix with sorted, duplicate-free column indices
/// within each row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl CsrMatrix {
    /// Build from (row, col, value) triplets. Duplicates are summed; entries
    /// are sorted per row.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nrows];
        for (i, j, v) in triplets {
            if i >= nrows || j >= ncols {
                return Err(Error::dim(format!(
                    "triplet ({i},{j}) outside {nrows}x{ncols}"
                )));
            }
            rows[i].push((j, v));
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        for row in rows.iter_mut() {
            row.sort_by_key(|&(j, _)| j);
            let mut k = 0;
            while k < row.len() {
                let (j, mut v) = row[k];
                let mut l = k + 1;
                while l < row.len() && row[l].0 == j {
                    v += row[l].1;
                    l += 1;
                }
                indices.push(j);
                data.push(v);
                k = l;
            }
            indptr.push(indices.len());
        }
        Ok(CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            data,
        })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[lo..hi], &self.data[lo..hi])
    }

    pub fn iter_entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn matvec(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.ncols {
            return Err(Error::dim(format!(
                "matvec length {} vs {} cols",
                x.len(),
                self.ncols
            )));
        }
        let mut y = Array1::zeros(self.nrows);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (&j, &v) in cols.iter().zip(vals) {
                acc += v * x[j];
            }
            y[i] = acc;
        }
        Ok(y)
    }

    /// `diag * I + scale * self`; requires a square matrix.
    pub fn scaled_plus_identity(&self, scale: f64, diag: f64) -> Result<CsrMatrix> {
        if self.nrows != self.ncols {
            return Err(Error::dim("scaled_plus_identity needs square matrix"));
        }
        let triplets = self
            .iter_entries()
            .map(|(i, j, v)| (i, j, scale * v))
            .chain((0..self.nrows).map(|i| (i, i, diag)));
        CsrMatrix::from_triplets(self.nrows, self.ncols, triplets)
    }

    /// Dense product `self * B` where rows of the result are accumulated in
    /// column-index order.
    pub fn matmul_dense(&self, b: &Array2<f64>) -> Result<Array2<f64>> {
        if b.nrows() != self.ncols {
            return Err(Error::dim(format!(
                "matmul rows {} vs {} cols",
                b.nrows(),
                self.ncols
            )));
        }
        let mut out = Array2::zeros((self.nrows, b.ncols()));
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let bj = b.row(j);
                let mut oi = out.row_mut(i);
                oi.zip_mut_with(&bj, |o, &bv| *o += v * bv);
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.nrows, self.ncols));
        for (i, j, v) in self.iter_entries() {
            a[[i, j]] += v;
        }
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn triplets_sum_duplicates_and_sort() {
        let m = CsrMatrix::from_triplets(2, 3, vec![(0, 2, 1.0), (0, 0, 2.0), (0, 2, 3.0)]).unwrap();
        let (cols, vals) = m.row(0);
        assert_eq!(cols, &[0, 2]);
        assert_eq!(vals, &[2.0, 4.0]);
        assert_eq!(m.row(1).0.len(), 0);
    }

    #[test]
    fn matvec_matches_dense() {
        let m = CsrMatrix::from_triplets(3, 3, vec![(0, 0, 2.0), (1, 0, -1.0), (1, 2, 4.0), (2, 1, 5.0)])
            .unwrap();
        let x = array![1.0, 2.0, 3.0];
        let y = m.matvec(x.view()).unwrap();
        assert_eq!(y, m.to_dense().dot(&x));
    }

    #[test]
    fn scaled_plus_identity_adds_diagonal() {
        let m = CsrMatrix::from_triplets(2, 2, vec![(0, 1, 3.0)]).unwrap();
        let s = m.scaled_plus_identity(-2.0, 1.5).unwrap();
        let d = s.to_dense();
        assert_eq!(d, array![[1.5, -6.0], [0.0, 1.5]]);
    }

    #[test]
    fn out_of_range_triplet_is_rejected() {
        assert!(CsrMatrix::from_triplets(2, 2, vec![(2, 0, 1.0)]).is_err());
    }
}
