//! Sparsity masks for the decoder output layer.
//!
//! A mask row lists which hidden nodes may feed one output feature. The 1D
//! generator gives row i a contiguous block of `b` columns starting at
//! `i * delta_b`, so the hidden width is `b + (m - 1) * delta_b`. The 2D
//! generator overlays the blocks of a grid point's 5-point stencil neighbors,
//! which reproduces the band structure of a 2D Laplacian.

use crate::{Error, Result};

/// Binary sparsity pattern, one sorted column list per output row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskMatrix {
    nrows: usize,
    ncols: usize,
    rows: Vec<Vec<usize>>,
}

impl MaskMatrix {
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    /// Sorted column indices allowed in row `i`.
    pub fn row(&self, i: usize) -> &[usize] {
        &self.rows[i]
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    /// Mask from explicit per-row column lists (each strictly increasing and
    /// in range). Rows may be empty here; generator masks never are.
    pub fn from_rows(ncols: usize, rows: Vec<Vec<usize>>) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::invalid(format!("mask row {i} is not strictly increasing")));
            }
            if row.last().is_some_and(|&c| c >= ncols) {
                return Err(Error::invalid(format!("mask row {i} has a column out of range")));
            }
        }
        Ok(MaskMatrix { nrows: rows.len(), ncols, rows })
    }
}

fn check_block_params(b: usize, delta_b: usize) -> Result<()> {
    if b < 1 || delta_b < 1 {
        return Err(Error::invalid(format!(
            "mask generator needs b >= 1 and delta_b >= 1, got b={b}, delta_b={delta_b}"
        )));
    }
    Ok(())
}

/// Contiguous-block mask: row i covers columns i*delta_b .. i*delta_b + b - 1.
/// Hidden width is b + (m - 1) * delta_b.
pub fn build_mask_1d(m: usize, b: usize, delta_b: usize) -> Result<MaskMatrix> {
    check_block_params(b, delta_b)?;
    if m == 0 {
        return Err(Error::invalid("mask needs at least one output row"));
    }
    let ncols = b + (m - 1) * delta_b;
    let rows = (0..m)
        .map(|i| (i * delta_b..i * delta_b + b).collect())
        .collect();
    Ok(MaskMatrix { nrows: m, ncols, rows })
}

/// Stencil-union mask for an nx_int x ny_int interior grid (row-major, x
/// fastest): each grid point's row is the union of the 1D-style blocks of
/// itself and its in-range 5-point stencil neighbors.
pub fn build_mask_2d(nx_int: usize, ny_int: usize, b: usize, delta_b: usize) -> Result<MaskMatrix> {
    check_block_params(b, delta_b)?;
    if nx_int == 0 || ny_int == 0 {
        return Err(Error::invalid("mask needs a nonempty interior grid"));
    }
    let m = nx_int * ny_int;
    let ncols = b + (m - 1) * delta_b;
    let mut rows = Vec::with_capacity(m);
    for iy in 0..ny_int {
        for ix in 0..nx_int {
            let g = iy * nx_int + ix;
            let mut neighbors = vec![g];
            if ix > 0 {
                neighbors.push(g - 1);
            }
            if ix + 1 < nx_int {
                neighbors.push(g + 1);
            }
            if iy > 0 {
                neighbors.push(g - nx_int);
            }
            if iy + 1 < ny_int {
                neighbors.push(g + nx_int);
            }
            let mut cols: Vec<usize> = neighbors
                .iter()
                .flat_map(|&n| n * delta_b..n * delta_b + b)
                .collect();
            cols.sort_unstable();
            cols.dedup();
            rows.push(cols);
        }
    }
    Ok(MaskMatrix { nrows: m, ncols, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn block_mask_three_rows() {
        let mask = build_mask_1d(3, 2, 1).unwrap();
        assert_eq!(mask.ncols(), 4);
        assert_eq!(mask.row(0), &[0, 1]);
        assert_eq!(mask.row(1), &[1, 2]);
        assert_eq!(mask.row(2), &[2, 3]);
    }

    #[test]
    fn single_row_mask_is_all_ones() {
        let mask = build_mask_1d(1, 5, 3).unwrap();
        assert_eq!(mask.ncols(), 5);
        assert_eq!(mask.row(0), &[0, 1, 2, 3, 4]);
    }

    #[test]
    fn zero_stride_is_rejected() {
        assert!(build_mask_1d(3, 2, 0).is_err());
        assert!(build_mask_1d(3, 0, 1).is_err());
        assert!(build_mask_2d(2, 2, 1, 0).is_err());
    }

    #[test]
    fn every_row_is_nonempty_and_in_range() {
        for mask in [build_mask_1d(10, 4, 2).unwrap(), build_mask_2d(4, 3, 3, 2).unwrap()] {
            for i in 0..mask.nrows() {
                assert!(!mask.row(i).is_empty());
                assert!(mask.row(i).iter().all(|&c| c < mask.ncols()));
            }
        }
    }

    #[test]
    fn paper_scale_widths_match_block_formula() {
        assert_eq!(build_mask_1d(1000, 36, 12).unwrap().ncols(), 12024);
        assert_eq!(build_mask_2d(58, 58, 100, 10).unwrap().ncols(), 33730);
    }

    #[test]
    fn stencil_mask_matches_set_union_oracle() {
        let (nx, ny, b, db) = (4, 3, 3, 2);
        let mask = build_mask_2d(nx, ny, b, db).unwrap();
        for iy in 0..ny {
            for ix in 0..nx {
                let g = iy * nx + ix;
                let mut expected = BTreeSet::new();
                for (dx, dy) in [(0i64, 0i64), (-1, 0), (1, 0), (0, -1), (0, 1)] {
                    let (jx, jy) = (ix as i64 + dx, iy as i64 + dy);
                    if jx < 0 || jy < 0 || jx >= nx as i64 || jy >= ny as i64 {
                        continue;
                    }
                    let n = (jy as usize) * nx + jx as usize;
                    expected.extend(n * db..n * db + b);
                }
                let got: BTreeSet<usize> = mask.row(g).iter().copied().collect();
                assert_eq!(got, expected, "row {g}");
            }
        }
    }

    #[test]
    fn corner_point_unions_three_blocks() {
        // Corner (0,0) on a 3x3 interior grid has neighbors itself, east, north.
        let mask = build_mask_2d(3, 3, 2, 2).unwrap();
        // Blocks: g=0 -> {0,1}, g=1 -> {2,3}, g=3 -> {6,7}.
        assert_eq!(mask.row(0), &[0, 1, 2, 3, 6, 7]);
    }
}
