//! Dense factorization kernels shared by every other module.
//!
//! Thin SVD, QR-based least squares, and Moore-Penrose pseudo-inverses with
//! explicit rank guards. Factorizations are delegated to nalgebra; this module
//! owns validation, ordering conventions, and the condition checks. All
//! routines are pure and deterministic for fixed inputs on one platform.

mod banded;
mod sparse;

pub use banded::{BandedLu, StencilSolver};
pub use sparse::CsrMatrix;

use crate::{Error, Result};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// Relative singular-value cutoff below which a matrix is treated as
/// rank-deficient by the solve and pseudo-inverse routines.
pub const RANK_TOL: f64 = 1e-12;

/// Validated dense real matrix: nonzero dimensions, all entries finite.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix(Array2<f64>);

impl DenseMatrix {
    pub fn new(a: Array2<f64>) -> Result<Self> {
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(Error::dim(format!(
                "matrix must be at least 1x1, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if !a.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("matrix entries must be finite"));
        }
        Ok(DenseMatrix(a))
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        Self::new(Array2::from_shape_fn((rows, cols), |(i, j)| f(i, j)))
    }

    pub fn identity(n: usize) -> Self {
        DenseMatrix(Array2::eye(n))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn into_array(self) -> Array2<f64> {
        self.0
    }
}

impl From<DenseMatrix> for Array2<f64> {
    fn from(m: DenseMatrix) -> Self {
        m.0
    }
}

/// Thin singular value decomposition `A = U diag(sigma) V^T` with
/// `U: m x k`, `sigma: k`, `V^T: k x n`, `k = min(m, n)`, singular values
/// sorted descending.
#[derive(Clone, Debug)]
pub struct ThinSvd {
    pub u: Array2<f64>,
    pub sigma: Array1<f64>,
    pub vt: Array2<f64>,
}

pub(crate) fn to_nalgebra(a: ArrayView2<f64>) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_row_iterator(a.nrows(), a.ncols(), a.iter().cloned())
}

pub(crate) fn from_nalgebra(m: &nalgebra::DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Thin SVD with singular values sorted in descending order.
pub fn thin_svd(a: &DenseMatrix) -> Result<ThinSvd> {
    thin_svd_view(a.view())
}

pub(crate) fn thin_svd_view(a: ArrayView2<f64>) -> Result<ThinSvd> {
    let na = to_nalgebra(a);
    let svd = nalgebra::linalg::SVD::try_new(na, true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::numerical("SVD iteration failed to converge"))?;
    let u = svd.u.ok_or_else(|| Error::numerical("SVD did not produce U"))?;
    let vt = svd
        .v_t
        .ok_or_else(|| Error::numerical("SVD did not produce V^T"))?;
    let k = svd.singular_values.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[j]
            .partial_cmp(&svd.singular_values[i])
            .unwrap()
            .then(i.cmp(&j))
    });
    let sigma = Array1::from_iter(order.iter().map(|&i| svd.singular_values[i]));
    let u_s = Array2::from_shape_fn((u.nrows(), k), |(i, j)| u[(i, order[j])]);
    let vt_s = Array2::from_shape_fn((k, vt.ncols()), |(i, j)| vt[(order[i], j)]);
    Ok(ThinSvd {
        u: u_s,
        sigma,
        vt: vt_s,
    })
}

impl ThinSvd {
    /// Largest over smallest singular value; infinite when rank-deficient.
    pub fn condition_number(&self) -> f64 {
        let max = self.sigma[0];
        let min = self.sigma[self.sigma.len() - 1];
        if min == 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }

    /// Count of singular values above `RANK_TOL` relative to the largest.
    pub fn numerical_rank(&self) -> usize {
        let cut = RANK_TOL * self.sigma[0];
        self.sigma.iter().filter(|&&s| s > cut).count()
    }

    /// Reassemble `U diag(sigma) V^T`.
    pub fn reconstruct(&self) -> Array2<f64> {
        let mut us = self.u.clone();
        for (mut col, s) in us.columns_mut().into_iter().zip(self.sigma.iter()) {
            col.mapv_inplace(|v| v * s);
        }
        us.dot(&self.vt)
    }
}

/// Upper-triangular factor of the thin QR of `a` (`rows >= cols` required).
pub fn qr_r_factor(a: &DenseMatrix) -> Result<Array2<f64>> {
    if a.rows() < a.cols() {
        return Err(Error::dim(format!(
            "QR R-factor needs rows >= cols, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let qr = nalgebra::linalg::QR::new(to_nalgebra(a.view()));
    Ok(from_nalgebra(&qr.r()))
}

struct ThinQr {
    q: nalgebra::DMatrix<f64>,
    r: nalgebra::DMatrix<f64>,
}

/// Thin QR with a rank guard: errors when `sigma_min(R) < RANK_TOL * sigma_max(R)`.
fn guarded_qr(a: ArrayView2<f64>, what: &str) -> Result<ThinQr> {
    if a.nrows() < a.ncols() {
        return Err(Error::dim(format!(
            "{what} needs a tall or square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let qr = nalgebra::linalg::QR::new(to_nalgebra(a));
    let q = qr.q();
    let r = qr.r();
    // The singular values of R equal those of A; R is small (cols x cols).
    let sv = r.clone().singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if smin < RANK_TOL * smax || smax == 0.0 {
        return Err(Error::numerical(format!(
            "{what}: rank-deficient matrix (sigma_min/sigma_max = {:.3e})",
            if smax == 0.0 { 0.0 } else { smin / smax }
        )));
    }
    Ok(ThinQr { q, r })
}

fn solve_upper(r: &nalgebra::DMatrix<f64>, rhs: nalgebra::DMatrix<f64>) -> nalgebra::DMatrix<f64> {
    let mut x = rhs;
    let n = r.ncols();
    for col in 0..x.ncols() {
        for i in (0..n).rev() {
            let mut acc = x[(i, col)];
            for j in i + 1..n {
                acc -= r[(i, j)] * x[(j, col)];
            }
            x[(i, col)] = acc / r[(i, i)];
        }
    }
    x
}

/// Minimum-norm residual solution of `min_x ||A x - b||_2` via thin QR.
/// Errors on rank deficiency instead of silently regularizing.
pub fn least_squares_solve(a: &DenseMatrix, b: ArrayView1<f64>) -> Result<Array1<f64>> {
    least_squares_view(a.view(), b)
}

pub(crate) fn least_squares_view(a: ArrayView2<f64>, b: ArrayView1<f64>) -> Result<Array1<f64>> {
    if b.len() != a.nrows() {
        return Err(Error::dim(format!(
            "least squares rhs length {} does not match {} rows",
            b.len(),
            a.nrows()
        )));
    }
    let qr = guarded_qr(a, "least_squares_solve")?;
    let bn = nalgebra::DVector::from_iterator(b.len(), b.iter().cloned());
    let qtb = qr.q.transpose() * bn;
    let x = solve_upper(&qr.r, nalgebra::DMatrix::from_column_slice(qtb.len(), 1, qtb.as_slice()));
    Ok(Array1::from_iter(x.column(0).iter().cloned()))
}

/// Moore-Penrose pseudo-inverse `(A^T A)^{-1} A^T` of a full-column-rank
/// matrix, computed through QR rather than normal equations.
pub fn pseudo_inverse(a: &DenseMatrix) -> Result<Array2<f64>> {
    pseudo_inverse_view(a.view())
}

pub(crate) fn pseudo_inverse_view(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    let qr = guarded_qr(a, "pseudo_inverse")?;
    let qt = qr.q.transpose();
    Ok(from_nalgebra(&solve_upper(&qr.r, qt)))
}

/// `A^+ B` for tall full-column-rank `A`, without forming `A^+` explicitly.
pub(crate) fn least_squares_multi(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Array2<f64>> {
    if b.nrows() != a.nrows() {
        return Err(Error::dim(format!(
            "least squares rhs rows {} do not match {} rows",
            b.nrows(),
            a.nrows()
        )));
    }
    let qr = guarded_qr(a, "least_squares_multi")?;
    let qtb = qr.q.transpose() * to_nalgebra(b);
    Ok(from_nalgebra(&solve_upper(&qr.r, qtb)))
}

/// Solve the square dense system `A x = b` by LU with partial pivoting.
pub(crate) fn solve_dense(a: ArrayView2<f64>, b: ArrayView1<f64>) -> Result<Array1<f64>> {
    if a.nrows() != a.ncols() || a.nrows() != b.len() {
        return Err(Error::dim("solve_dense needs square A matching b".to_string()));
    }
    let lu = to_nalgebra(a).lu();
    let bn = nalgebra::DVector::from_iterator(b.len(), b.iter().cloned());
    let x = lu
        .solve(&bn)
        .ok_or_else(|| Error::numerical("singular matrix in dense solve"))?;
    Ok(Array1::from_iter(x.iter().cloned()))
}

/// Spectral norm estimate by power iteration on `A^T A` to relative
/// tolerance `tol` on the dominant singular value.
pub fn spectral_norm(a: ArrayView2<f64>, tol: f64, max_iter: usize) -> f64 {
    let n = a.ncols();
    if a.is_empty() {
        return 0.0;
    }
    // Fixed deterministic start vector with energy in every direction.
    let mut v = Array1::from_shape_fn(n, |i| 1.0 + (i as f64 + 1.0).sqrt().fract());
    let norm = v.dot(&v).sqrt();
    v.mapv_inplace(|x| x / norm);
    let mut sigma = 0.0_f64;
    for _ in 0..max_iter {
        let av = a.dot(&v);
        let mut w = a.t().dot(&av);
        let wn = w.dot(&w).sqrt();
        if wn == 0.0 {
            return 0.0;
        }
        w.mapv_inplace(|x| x / wn);
        let new_sigma = wn.sqrt();
        let done = (new_sigma - sigma).abs() <= tol * new_sigma.max(1e-300);
        sigma = new_sigma;
        v = w;
        if done {
            break;
        }
    }
    sigma
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn frob(a: &Array2<f64>) -> f64 {
        a.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn dense_matrix_rejects_empty_and_nonfinite() {
        assert!(DenseMatrix::new(Array2::zeros((0, 3))).is_err());
        assert!(DenseMatrix::new(array![[1.0, f64::NAN]]).is_err());
        assert!(DenseMatrix::new(array![[1.0, f64::INFINITY]]).is_err());
        assert!(DenseMatrix::new(array![[1.0, 2.0]]).is_ok());
    }

    #[test]
    fn thin_svd_identity_has_unit_singular_values() {
        let svd = thin_svd(&DenseMatrix::identity(4)).unwrap();
        for s in svd.sigma.iter() {
            assert_abs_diff_eq!(*s, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn thin_svd_diag_1_2_3() {
        // diag(3,1,2) has singular values (3,2,1) after sorting.
        let a = array![[3.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 2.0]];
        let svd = thin_svd(&DenseMatrix::new(a).unwrap()).unwrap();
        assert_abs_diff_eq!(svd.sigma[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(svd.sigma[1], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(svd.sigma[2], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn thin_svd_reconstructs_random_matrices() {
        for (rows, cols, seed) in [(7, 4, 1), (4, 7, 2), (12, 12, 3), (30, 5, 4)] {
            let a = random_matrix(rows, cols, seed);
            let svd = thin_svd(&DenseMatrix::new(a.clone()).unwrap()).unwrap();
            let err = frob(&(&svd.reconstruct() - &a)) / frob(&a).max(1.0);
            assert!(err <= 1e-10, "reconstruction error {err} for {rows}x{cols}");
            // Orthonormal columns of U.
            let gram = svd.u.t().dot(&svd.u);
            let k = svd.sigma.len();
            let dev = frob(&(&gram - &Array2::<f64>::eye(k)));
            assert!(dev <= 1e-10 * k as f64, "U^T U deviates by {dev}");
            // Descending order.
            for w in svd.sigma.windows(2) {
                assert!(w[0] >= w[1]);
            }
        }
    }

    #[test]
    fn qr_r_of_orthonormal_matrix_is_diagonal_unit() {
        // Columns of the DFT-like basis are orthonormal; R must be identity up
        // to column signs.
        let n = 6;
        let mut a = Array2::zeros((n, 2));
        for i in 0..n {
            a[[i, 0]] = 1.0 / (n as f64).sqrt();
            a[[i, 1]] = if i % 2 == 0 { 1.0 } else { -1.0 } / (n as f64).sqrt();
        }
        let r = qr_r_factor(&DenseMatrix::new(a).unwrap()).unwrap();
        assert_abs_diff_eq!(r[[0, 0]].abs(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r[[1, 1]].abs(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r[[0, 1]], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn least_squares_known_overdetermined_system() {
        // Fit y = 1 + 2x through exact points: unique LS solution (1, 2).
        let a = array![[1.0, 0.0], [1.0, 1.0], [1.0, 2.0], [1.0, 3.0]];
        let b = array![1.0, 3.0, 5.0, 7.0];
        let x = least_squares_solve(&DenseMatrix::new(a).unwrap(), b.view()).unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn least_squares_residual_orthogonal_to_range() {
        let a = random_matrix(20, 6, 7);
        let b = Array1::from_iter(random_matrix(20, 1, 8).iter().cloned());
        let x = least_squares_solve(&DenseMatrix::new(a.clone()).unwrap(), b.view()).unwrap();
        let r = &a.dot(&x) - &b;
        let g = a.t().dot(&r);
        for v in g.iter() {
            assert!(v.abs() <= 1e-10, "normal equations residual {v}");
        }
    }

    #[test]
    fn rank_deficient_matrix_is_refused() {
        let a = array![[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]];
        let b = array![1.0, 2.0, 3.0];
        let err = least_squares_solve(&DenseMatrix::new(a.clone()).unwrap(), b.view());
        assert!(matches!(err, Err(Error::Numerical(_))));
        assert!(pseudo_inverse(&DenseMatrix::new(a).unwrap()).is_err());
    }

    #[test]
    fn pseudo_inverse_satisfies_moore_penrose_identities() {
        for seed in [11, 12, 13] {
            let a = random_matrix(9, 4, seed);
            let p = pseudo_inverse(&DenseMatrix::new(a.clone()).unwrap()).unwrap();
            let apa = a.dot(&p).dot(&a);
            let pap = p.dot(&a).dot(&p);
            assert!(frob(&(&apa - &a)) <= 1e-8 * frob(&a).max(1.0));
            assert!(frob(&(&pap - &p)) <= 1e-8 * frob(&p).max(1.0));
            let ap = a.dot(&p);
            let pa = p.dot(&a);
            assert!(frob(&(&ap.t().to_owned() - &ap)) <= 1e-8);
            assert!(frob(&(&pa.t().to_owned() - &pa)) <= 1e-8);
        }
    }

    #[test]
    fn pseudo_inverse_of_orthonormal_is_transpose() {
        let svd = thin_svd(&DenseMatrix::new(random_matrix(10, 3, 21)).unwrap()).unwrap();
        let q = svd.u;
        let p = pseudo_inverse(&DenseMatrix::new(q.clone()).unwrap()).unwrap();
        assert!(frob(&(&p - &q.t().to_owned())) <= 1e-10);
    }

    #[test]
    fn spectral_norm_matches_largest_singular_value() {
        let a = random_matrix(15, 9, 31);
        let svd = thin_svd(&DenseMatrix::new(a.clone()).unwrap()).unwrap();
        let est = spectral_norm(a.view(), 1e-10, 500);
        assert_abs_diff_eq!(est, svd.sigma[0], epsilon = 1e-7 * svd.sigma[0]);
    }

    #[test]
    fn solve_dense_roundtrip() {
        let a = random_matrix(8, 8, 41);
        let x_true = Array1::from_iter((0..8).map(|i| i as f64 - 3.5));
        let b = a.dot(&x_true);
        let x = solve_dense(a.view(), b.view()).unwrap();
        for (xi, ti) in x.iter().zip(x_true.iter()) {
            assert_abs_diff_eq!(xi, ti, epsilon = 1e-9);
        }
    }
}
