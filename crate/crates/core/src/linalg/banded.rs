//! Banded LU with partial pivoting, plus a low-rank Woodbury correction for
//! the handful of matrix entries a periodic stencil places outside the band.

use super::sparse::CsrMatrix;
use crate::{Error, Result};

/// LU factorization of a banded matrix in LAPACK-style band storage
/// (`2*kl + ku + 1` storage rows, the top `kl` reserved for pivoting fill).
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    /// Row-major `(2kl + ku + 1) x n`; element (i, j) sits at storage row
    /// `kl + ku + i - j`.
    ab: Vec<f64>,
    piv: Vec<usize>,
}

impl BandedLu {
    /// Factor a square banded matrix given by entry triplets. Entries outside
    /// the declared band are an error; duplicates are summed.
    pub fn factor(
        n: usize,
        kl: usize,
        ku: usize,
        entries: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::dim("banded matrix must be at least 1x1"));
        }
        let kl = kl.min(n - 1);
        let ku = ku.min(n - 1);
        let kv = kl + ku;
        let rows = 2 * kl + ku + 1;
        let mut ab = vec![0.0; rows * n];
        for (i, j, v) in entries {
            if i >= n || j >= n {
                return Err(Error::dim(format!("entry ({i},{j}) outside {n}x{n}")));
            }
            if i + ku < j || j + kl < i {
                return Err(Error::invalid(format!(
                    "entry ({i},{j}) outside band kl={kl}, ku={ku}"
                )));
            }
            ab[(kv + i - j) * n + j] += v;
        }
        let mut piv = vec![0usize; n];
        let mut ju = 0usize;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let mut p = 0usize;
            let mut best = ab[kv * n + j].abs();
            for q in 1..=km {
                let cand = ab[(kv + q) * n + j].abs();
                if cand > best {
                    best = cand;
                    p = q;
                }
            }
            piv[j] = j + p;
            let pivot = ab[(kv + p) * n + j];
            if pivot == 0.0 {
                return Err(Error::numerical(format!(
                    "banded LU: zero pivot at column {j}"
                )));
            }
            ju = ju.max((j + ku + p).min(n - 1));
            if p != 0 {
                for c in j..=ju {
                    ab.swap((kv + j + p - c) * n + c, (kv + j - c) * n + c);
                }
            }
            if km > 0 {
                let d = ab[kv * n + j];
                for i in 1..=km {
                    ab[(kv + i) * n + j] /= d;
                }
                for c in j + 1..=ju {
                    let f = ab[(kv + j - c) * n + c];
                    if f != 0.0 {
                        for i in 1..=km {
                            ab[(kv + j + i - c) * n + c] -= ab[(kv + i) * n + j] * f;
                        }
                    }
                }
            }
        }
        Ok(BandedLu { n, kl, ku, ab, piv })
    }

    pub fn solve_in_place(&self, b: &mut [f64]) -> Result<()> {
        if b.len() != self.n {
            return Err(Error::dim(format!(
                "banded solve rhs length {} vs n={}",
                b.len(),
                self.n
            )));
        }
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let kv = kl + ku;
        if kl > 0 {
            for j in 0..n - 1 {
                let lm = kl.min(n - 1 - j);
                let p = self.piv[j];
                if p != j {
                    b.swap(p, j);
                }
                for i in 1..=lm {
                    b[j + i] -= self.ab[(kv + i) * n + j] * b[j];
                }
            }
        }
        for j in (0..n).rev() {
            b[j] /= self.ab[kv * n + j];
            let top = j.saturating_sub(kl + ku);
            for i in top..j {
                b[i] -= self.ab[(kv + i - j) * n + j] * b[j];
            }
        }
        Ok(())
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x)?;
        Ok(x)
    }
}

/// Direct solver for sparse stencil systems: a symmetric index permutation
/// brings the matrix to banded form, a banded LU factors the in-band part, and
/// the few out-of-band entries (periodic wrap-around couplings) are folded in
/// through the Woodbury identity.
pub struct StencilSolver {
    lu: BandedLu,
    perm: Option<Vec<usize>>,
    /// Columns of `B^{-1} U` for the rank-r correction `A = B + U V^T`.
    w: Vec<Vec<f64>>,
    /// Permuted column index of each correction term (the `V` side).
    cols: Vec<usize>,
    /// LU of the r x r capacitance matrix `I + V^T B^{-1} U`.
    cap: Option<nalgebra::linalg::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    n: usize,
}

impl StencilSolver {
    /// Factor `a` with band widths (`kl`, `ku`) measured after applying the
    /// optional symmetric permutation `position = perm[original]`. Entries
    /// still outside the band become Woodbury correction terms.
    pub fn factor(a: &CsrMatrix, kl: usize, ku: usize, perm: Option<&[usize]>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::dim("stencil solver needs a square matrix"));
        }
        let n = a.nrows();
        if let Some(p) = perm {
            if p.len() != n {
                return Err(Error::dim("permutation length mismatch"));
            }
        }
        let kl = kl.min(n - 1);
        let ku = ku.min(n - 1);
        let mut banded = Vec::with_capacity(a.nnz());
        let mut outliers: Vec<(usize, usize, f64)> = Vec::new();
        for (i, j, v) in a.iter_entries() {
            let (pi, pj) = match perm {
                Some(p) => (p[i], p[j]),
                None => (i, j),
            };
            if pi + ku < pj || pj + kl < pi {
                outliers.push((pi, pj, v));
            } else {
                banded.push((pi, pj, v));
            }
        }
        if outliers.len() > 8 {
            return Err(Error::invalid(format!(
                "{} entries outside the declared band; band widths are wrong for this stencil",
                outliers.len()
            )));
        }
        let lu = BandedLu::factor(n, kl, ku, banded)?;
        let r = outliers.len();
        let mut w = Vec::with_capacity(r);
        let mut cols = Vec::with_capacity(r);
        for &(ri, _, v) in &outliers {
            let mut e = vec![0.0; n];
            e[ri] = v;
            lu.solve_in_place(&mut e)?;
            w.push(e);
        }
        for &(_, cj, _) in &outliers {
            cols.push(cj);
        }
        let cap = if r > 0 {
            let s = nalgebra::DMatrix::from_fn(r, r, |k, l| {
                let delta = if k == l { 1.0 } else { 0.0 };
                delta + w[l][cols[k]]
            });
            let lu_s = s.lu();
            if lu_s.determinant().abs() == 0.0 {
                return Err(Error::numerical(
                    "stencil solver: singular Woodbury capacitance matrix",
                ));
            }
            Some(lu_s)
        } else {
            None
        };
        Ok(StencilSolver {
            lu,
            perm: perm.map(|p| p.to_vec()),
            w,
            cols,
            cap,
            n,
        })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n {
            return Err(Error::dim(format!(
                "stencil solve rhs length {} vs n={}",
                b.len(),
                self.n
            )));
        }
        let mut z = match &self.perm {
            Some(p) => {
                let mut bp = vec![0.0; self.n];
                for (i, &pi) in p.iter().enumerate() {
                    bp[pi] = b[i];
                }
                bp
            }
            None => b.to_vec(),
        };
        self.lu.solve_in_place(&mut z)?;
        if let Some(cap) = &self.cap {
            let r = self.w.len();
            let rhs = nalgebra::DVector::from_fn(r, |k, _| z[self.cols[k]]);
            let t = cap
                .solve(&rhs)
                .ok_or_else(|| Error::numerical("Woodbury capacitance solve failed"))?;
            for (l, wl) in self.w.iter().enumerate() {
                let tl = t[l];
                if tl != 0.0 {
                    for (zi, wi) in z.iter_mut().zip(wl) {
                        *zi -= wi * tl;
                    }
                }
            }
        }
        Ok(match &self.perm {
            Some(p) => {
                let mut x = vec![0.0; self.n];
                for (i, &pi) in p.iter().enumerate() {
                    x[i] = z[pi];
                }
                x
            }
            None => z,
        })
    }
}
