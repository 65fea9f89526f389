//! 1D inviscid Burgers on [0, 2] with a periodic boundary and backward
//! (upwind) differencing of the advection term.

use super::{sorted_unique, NewtonPlan, SemiDiscreteModel, StateAccess, StateVector};
use crate::linalg::CsrMatrix;
use crate::{Error, Result};
use ndarray::Array1;
use std::f64::consts::PI;

/// Uniform periodic mesh on [0, 2]: `nx` grid points including both ends,
/// spacing `dx = 2/(nx-1)`. The duplicated endpoint is not an unknown, so the
/// state has `m = nx - 1` entries at x = 0, dx, ..., 2 - dx.
#[derive(Clone, Debug)]
pub struct Mesh1D {
    pub nx: usize,
    pub dx: f64,
}

impl Mesh1D {
    pub fn new(nx: usize) -> Result<Self> {
        if nx < 3 {
            return Err(Error::invalid(format!("Mesh1D needs nx >= 3, got {nx}")));
        }
        Ok(Mesh1D {
            nx,
            dx: 2.0 / (nx - 1) as f64,
        })
    }

    /// Unknown count.
    pub fn m(&self) -> usize {
        self.nx - 1
    }

    /// Coordinate of unknown `j`.
    pub fn x(&self, j: usize) -> f64 {
        j as f64 * self.dx
    }
}

/// Parameterized 1D model; `mu` scales the initial bump amplitude.
#[derive(Clone, Debug)]
pub struct Model1D {
    pub mesh: Mesh1D,
    pub mu: f64,
}

impl Model1D {
    pub fn new(mesh: Mesh1D, mu: f64) -> Result<Self> {
        if !mu.is_finite() || mu <= 0.0 {
            return Err(Error::invalid(format!("Model1D needs mu > 0, got {mu}")));
        }
        Ok(Model1D { mesh, mu })
    }

    /// u(x, 0) = 1 + (mu/2)(sin(2 pi x - pi/2) + 1) on [0, 1], and 1 elsewhere.
    /// Both pieces meet at value 1, so the profile is continuous.
    pub fn initial_state_1d(&self) -> StateVector {
        let m = self.mesh.m();
        Array1::from_shape_fn(m, |j| {
            let x = self.mesh.x(j);
            if x <= 1.0 {
                1.0 + 0.5 * self.mu * ((2.0 * PI * x - 0.5 * PI).sin() + 1.0)
            } else {
                1.0
            }
        })
    }

    /// f_j = -u_j (u_j - u_{j-1}) / dx with the periodic wrap u_{-1} = u_{m-1}.
    pub fn flux_1d(&self, u: &[f64]) -> StateVector {
        let m = self.mesh.m();
        assert_eq!(u.len(), m, "state length mismatch");
        let inv_dx = 1.0 / self.mesh.dx;
        Array1::from_shape_fn(m, |j| {
            let west = u[(j + m - 1) % m];
            -u[j] * (u[j] - west) * inv_dx
        })
    }

    /// Jacobian rows: d f_j / d u_j = -(2 u_j - u_{j-1})/dx and
    /// d f_j / d u_{j-1} = u_j / dx, with the periodic corner in row 0.
    pub fn flux_jacobian_1d(&self, u: &[f64]) -> CsrMatrix {
        let m = self.mesh.m();
        assert_eq!(u.len(), m, "state length mismatch");
        let inv_dx = 1.0 / self.mesh.dx;
        let mut t = Vec::with_capacity(2 * m);
        for j in 0..m {
            let w = (j + m - 1) % m;
            t.push((j, j, -(2.0 * u[j] - u[w]) * inv_dx));
            t.push((j, w, u[j] * inv_dx));
        }
        CsrMatrix::from_triplets(m, m, t).expect("indices in range by construction")
    }
}

impl SemiDiscreteModel for Model1D {
    fn dim(&self) -> usize {
        self.mesh.m()
    }

    fn initial_state(&self) -> StateVector {
        self.initial_state_1d()
    }

    fn flux(&self, u: &[f64]) -> StateVector {
        self.flux_1d(u)
    }

    fn flux_jacobian(&self, u: &[f64]) -> CsrMatrix {
        self.flux_jacobian_1d(u)
    }

    fn flux_rows(&self, u: &dyn StateAccess, rows: &[usize], out: &mut [f64]) {
        let m = self.mesh.m();
        let inv_dx = 1.0 / self.mesh.dx;
        for (o, &j) in out.iter_mut().zip(rows) {
            let uj = u.get(j);
            let west = u.get((j + m - 1) % m);
            *o = -uj * (uj - west) * inv_dx;
        }
    }

    fn flux_jacobian_rows(&self, u: &dyn StateAccess, rows: &[usize]) -> Vec<Vec<(usize, f64)>> {
        let m = self.mesh.m();
        let inv_dx = 1.0 / self.mesh.dx;
        rows.iter()
            .map(|&j| {
                let w = (j + m - 1) % m;
                let uj = u.get(j);
                let uw = u.get(w);
                let mut entries = vec![(j, -(2.0 * uj - uw) * inv_dx), (w, uj * inv_dx)];
                entries.sort_by_key(|&(c, _)| c);
                entries
            })
            .collect()
    }

    fn stencil_neighbors(&self, rows: &[usize]) -> Result<Vec<usize>> {
        let m = self.mesh.m();
        let mut out = Vec::with_capacity(2 * rows.len());
        for &j in rows {
            if j >= m {
                return Err(Error::dim(format!("row {j} outside state of length {m}")));
            }
            out.push(j);
            out.push((j + m - 1) % m);
        }
        Ok(sorted_unique(out))
    }

    fn newton_plan(&self) -> NewtonPlan {
        // Lower bidiagonal; the periodic corner entry (0, m-1) is out of band
        // and lands in the solver's low-rank correction.
        NewtonPlan {
            kl: 1,
            ku: 0,
            perm: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::burgers::FullState;
    use approx::assert_abs_diff_eq;

    #[test]
    fn initial_state_known_values() {
        let model = Model1D::new(Mesh1D::new(9).unwrap(), 1.0).unwrap();
        // dx = 0.25; x=0.25 -> 1 + 0.5(sin(0) + 1) = 1.5.
        let u0 = model.initial_state_1d();
        assert_abs_diff_eq!(u0[1], 1.5, epsilon = 1e-14);
        // x=0 -> sin(-pi/2) = -1 -> exactly 1.
        assert_abs_diff_eq!(u0[0], 1.0, epsilon = 1e-14);
        // Peak at x = 0.5: 1 + mu.
        assert_abs_diff_eq!(u0[2], 2.0, epsilon = 1e-14);
        // Outside [0, 1] the profile is 1.
        assert_abs_diff_eq!(u0[5], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(u0[7], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn initial_state_scales_with_mu() {
        let model = Model1D::new(Mesh1D::new(101).unwrap(), 0.6).unwrap();
        let u0 = model.initial_state_1d();
        let peak = u0.iter().cloned().fold(f64::MIN, f64::max);
        assert_abs_diff_eq!(peak, 1.6, epsilon = 1e-12);
    }

    #[test]
    fn flux_two_cell_example() {
        // nx = 3 gives dx = 1 and two unknowns.
        let model = Model1D::new(Mesh1D::new(3).unwrap(), 1.0).unwrap();
        let f = model.flux_1d(&[2.0, 1.0]);
        assert_abs_diff_eq!(f[0], -2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(f[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn constant_state_has_zero_flux() {
        let model = Model1D::new(Mesh1D::new(33).unwrap(), 1.0).unwrap();
        let f = model.flux_1d(&vec![1.7; 32]);
        for v in f.iter() {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let model = Model1D::new(Mesh1D::new(17).unwrap(), 1.0).unwrap();
        let u: Vec<f64> = model.initial_state_1d().to_vec();
        let jac = model.flux_jacobian_1d(&u).to_dense();
        let h = 1e-6;
        let m = u.len();
        for j in 0..m {
            let mut up = u.clone();
            let mut dn = u.clone();
            up[j] += h;
            dn[j] -= h;
            let fp = model.flux_1d(&up);
            let fm = model.flux_1d(&dn);
            for i in 0..m {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                let err = (jac[[i, j]] - fd).abs() / fd.abs().max(1.0);
                assert!(err <= 1e-6, "J[{i},{j}] = {} vs fd {fd}", jac[[i, j]]);
            }
        }
    }

    #[test]
    fn jacobian_sparsity_is_diagonal_plus_west() {
        let model = Model1D::new(Mesh1D::new(11).unwrap(), 0.9).unwrap();
        let u: Vec<f64> = model.initial_state_1d().to_vec();
        let jac = model.flux_jacobian_1d(&u);
        let m = u.len();
        for i in 0..m {
            let (cols, _) = jac.row(i);
            let west = (i + m - 1) % m;
            let mut expect = [i, west];
            expect.sort_unstable();
            assert_eq!(cols, &expect[..]);
        }
    }

    #[test]
    fn sampled_rows_match_full_flux_and_jacobian() {
        let model = Model1D::new(Mesh1D::new(41).unwrap(), 1.1).unwrap();
        let u: Vec<f64> = model.initial_state_1d().to_vec();
        let rows = vec![0usize, 3, 17, 39];
        let mut out = vec![0.0; rows.len()];
        model.flux_rows(&FullState(&u), &rows, &mut out);
        let full = model.flux_1d(&u);
        for (k, &r) in rows.iter().enumerate() {
            assert_eq!(out[k], full[r]);
        }
        let jr = model.flux_jacobian_rows(&FullState(&u), &rows);
        let jd = model.flux_jacobian(&u).to_dense();
        for (k, &r) in rows.iter().enumerate() {
            for &(c, v) in &jr[k] {
                assert_eq!(v, jd[[r, c]]);
            }
        }
    }

    #[test]
    fn stencil_neighbors_wraps_periodically() {
        let model = Model1D::new(Mesh1D::new(11).unwrap(), 1.0).unwrap();
        assert_eq!(model.stencil_neighbors(&[0]).unwrap(), vec![0, 9]);
        assert_eq!(model.stencil_neighbors(&[5, 6]).unwrap(), vec![4, 5, 6]);
        assert!(model.stencil_neighbors(&[10]).is_err());
    }
}
