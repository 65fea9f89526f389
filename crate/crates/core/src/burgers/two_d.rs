//! 2D viscous Burgers on the unit square with homogeneous Dirichlet walls.
//!
//! Advection uses backward differences, diffusion central differences. Only
//! interior points are unknowns, ordered lexicographically (x fastest), and
//! the two velocity components are stacked as (u; v). With zero boundary data
//! every boundary-contribution vector vanishes, which the stencils encode by
//! reading 0 past the walls.

use super::{sorted_unique, FullState, NewtonPlan, SemiDiscreteModel, StateAccess, StateVector};
use crate::linalg::CsrMatrix;
use crate::{Error, Result};
use ndarray::Array1;
use std::f64::consts::PI;

/// Uniform grid on [0,1]^2 with `nx x ny` points including walls; the
/// unknowns are the `(nx-2)(ny-2)` interior points per velocity component.
#[derive(Clone, Debug)]
pub struct Mesh2D {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
}

impl Mesh2D {
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(Error::invalid(format!(
                "Mesh2D needs nx, ny >= 3, got {nx} x {ny}"
            )));
        }
        Ok(Mesh2D {
            nx,
            ny,
            dx: 1.0 / (nx - 1) as f64,
            dy: 1.0 / (ny - 1) as f64,
        })
    }

    /// Interior extent in x.
    pub fn nxi(&self) -> usize {
        self.nx - 2
    }

    /// Interior extent in y.
    pub fn nyi(&self) -> usize {
        self.ny - 2
    }

    /// Interior point count per component.
    pub fn n_xy(&self) -> usize {
        self.nxi() * self.nyi()
    }

    /// Coordinates of interior point `g` (lexicographic, x fastest).
    pub fn xy(&self, g: usize) -> (f64, f64) {
        let i = g % self.nxi();
        let j = g / self.nxi();
        ((i + 1) as f64 * self.dx, (j + 1) as f64 * self.dy)
    }
}

/// Parameterized 2D model: `mu` scales the initial condition, `re` is the
/// Reynolds number in the diffusion terms.
#[derive(Clone, Debug)]
pub struct Model2D {
    pub mesh: Mesh2D,
    pub mu: f64,
    pub re: f64,
}

struct Neighbors {
    west: Option<usize>,
    east: Option<usize>,
    south: Option<usize>,
    north: Option<usize>,
}

impl Model2D {
    pub fn new(mesh: Mesh2D, mu: f64, re: f64) -> Result<Self> {
        if !mu.is_finite() || mu <= 0.0 {
            return Err(Error::invalid(format!("Model2D needs mu > 0, got {mu}")));
        }
        if !re.is_finite() || re <= 0.0 {
            return Err(Error::invalid(format!("Model2D needs re > 0, got {re}")));
        }
        Ok(Model2D { mesh, mu, re })
    }

    fn neighbors(&self, g: usize) -> Neighbors {
        let nxi = self.mesh.nxi();
        let mc = self.mesh.n_xy();
        let i = g % nxi;
        Neighbors {
            west: (i > 0).then(|| g - 1),
            east: (i + 1 < nxi).then(|| g + 1),
            south: (g >= nxi).then(|| g - nxi),
            north: (g + nxi < mc).then(|| g + nxi),
        }
    }

    /// Both components start as mu sin(2 pi x) sin(2 pi y) inside
    /// [0, 0.5]^2 and zero elsewhere; the product vanishes on the edge of
    /// that box, so the field is continuous.
    pub fn initial_state_2d(&self) -> (StateVector, StateVector) {
        let mc = self.mesh.n_xy();
        let w = Array1::from_shape_fn(mc, |g| {
            let (x, y) = self.mesh.xy(g);
            if x <= 0.5 && y <= 0.5 {
                self.mu * (2.0 * PI * x).sin() * (2.0 * PI * y).sin()
            } else {
                0.0
            }
        });
        (w.clone(), w)
    }

    /// Flux for both components given separate u and v vectors.
    pub fn flux_2d(&self, u: &[f64], v: &[f64]) -> (StateVector, StateVector) {
        let mc = self.mesh.n_xy();
        assert_eq!(u.len(), mc, "u length mismatch");
        assert_eq!(v.len(), mc, "v length mismatch");
        let stacked: Vec<f64> = u.iter().chain(v.iter()).cloned().collect();
        let rows: Vec<usize> = (0..2 * mc).collect();
        let mut out = vec![0.0; 2 * mc];
        self.flux_rows(&FullState(&stacked), &rows, &mut out);
        (
            Array1::from_iter(out[..mc].iter().cloned()),
            Array1::from_iter(out[mc..].iter().cloned()),
        )
    }

    fn jacobian_row(&self, state: &dyn StateAccess, row: usize) -> Vec<(usize, f64)> {
        let mc = self.mesh.n_xy();
        let (dx, dy, re) = (self.mesh.dx, self.mesh.dy, self.re);
        let cx = 1.0 / (re * dx * dx);
        let cy = 1.0 / (re * dy * dy);
        let mut entries = Vec::with_capacity(6);
        if row < mc {
            let g = row;
            let nb = self.neighbors(g);
            let ug = state.get(g);
            let vg = state.get(mc + g);
            let uw = nb.west.map_or(0.0, |w| state.get(w));
            let us = nb.south.map_or(0.0, |s| state.get(s));
            entries.push((g, -(2.0 * ug - uw) / dx - vg / dy - 2.0 * cx - 2.0 * cy));
            if let Some(w) = nb.west {
                entries.push((w, ug / dx + cx));
            }
            if let Some(e) = nb.east {
                entries.push((e, cx));
            }
            if let Some(s) = nb.south {
                entries.push((s, vg / dy + cy));
            }
            if let Some(n) = nb.north {
                entries.push((n, cy));
            }
            entries.push((mc + g, -(ug - us) / dy));
        } else {
            let g = row - mc;
            let nb = self.neighbors(g);
            let ug = state.get(g);
            let vg = state.get(mc + g);
            let vw = nb.west.map_or(0.0, |w| state.get(mc + w));
            let vs = nb.south.map_or(0.0, |s| state.get(mc + s));
            entries.push((mc + g, -ug / dx - (2.0 * vg - vs) / dy - 2.0 * cx - 2.0 * cy));
            if let Some(w) = nb.west {
                entries.push((mc + w, ug / dx + cx));
            }
            if let Some(e) = nb.east {
                entries.push((mc + e, cx));
            }
            if let Some(s) = nb.south {
                entries.push((mc + s, vg / dy + cy));
            }
            if let Some(n) = nb.north {
                entries.push((mc + n, cy));
            }
            entries.push((g, -(vg - vw) / dx));
        }
        entries.sort_by_key(|&(c, _)| c);
        entries
    }
}

impl SemiDiscreteModel for Model2D {
    fn dim(&self) -> usize {
        2 * self.mesh.n_xy()
    }

    fn initial_state(&self) -> StateVector {
        let (u, v) = self.initial_state_2d();
        Array1::from_iter(u.iter().chain(v.iter()).cloned())
    }

    fn flux(&self, w: &[f64]) -> StateVector {
        let rows: Vec<usize> = (0..self.dim()).collect();
        let mut out = vec![0.0; self.dim()];
        self.flux_rows(&FullState(w), &rows, &mut out);
        Array1::from_vec(out)
    }

    fn flux_jacobian(&self, w: &[f64]) -> CsrMatrix {
        let n = self.dim();
        assert_eq!(w.len(), n, "state length mismatch");
        let state = FullState(w);
        let mut triplets = Vec::with_capacity(6 * n);
        for row in 0..n {
            for (c, v) in self.jacobian_row(&state, row) {
                triplets.push((row, c, v));
            }
        }
        CsrMatrix::from_triplets(n, n, triplets).expect("indices in range by construction")
    }

    fn flux_rows(&self, w: &dyn StateAccess, rows: &[usize], out: &mut [f64]) {
        let mc = self.mesh.n_xy();
        let (dx, dy, re) = (self.mesh.dx, self.mesh.dy, self.re);
        let cx = 1.0 / (re * dx * dx);
        let cy = 1.0 / (re * dy * dy);
        for (o, &row) in out.iter_mut().zip(rows) {
            let (g, comp_off) = if row < mc { (row, 0) } else { (row - mc, mc) };
            let nb = self.neighbors(g);
            // Advection velocities always come from (u, v) at this point.
            let ug = w.get(g);
            let vg = w.get(mc + g);
            // Differenced quantity is the row's own component.
            let wg = w.get(comp_off + g);
            let ww = nb.west.map_or(0.0, |i| w.get(comp_off + i));
            let we = nb.east.map_or(0.0, |i| w.get(comp_off + i));
            let ws = nb.south.map_or(0.0, |i| w.get(comp_off + i));
            let wn = nb.north.map_or(0.0, |i| w.get(comp_off + i));
            *o = -ug * (wg - ww) / dx - vg * (wg - ws) / dy
                + cx * (we - 2.0 * wg + ww)
                + cy * (wn - 2.0 * wg + ws);
        }
    }

    fn flux_jacobian_rows(&self, w: &dyn StateAccess, rows: &[usize]) -> Vec<Vec<(usize, f64)>> {
        rows.iter().map(|&r| self.jacobian_row(w, r)).collect()
    }

    fn stencil_neighbors(&self, rows: &[usize]) -> Result<Vec<usize>> {
        let mc = self.mesh.n_xy();
        let n = 2 * mc;
        let mut out = Vec::with_capacity(6 * rows.len());
        for &row in rows {
            if row >= n {
                return Err(Error::dim(format!("row {row} outside state of length {n}")));
            }
            let (g, comp_off) = if row < mc { (row, 0) } else { (row - mc, mc) };
            let nb = self.neighbors(g);
            out.push(comp_off + g);
            for i in [nb.west, nb.east, nb.south, nb.north].into_iter().flatten() {
                out.push(comp_off + i);
            }
            // Advection velocity of the other component at the same point.
            out.push(g);
            out.push(mc + g);
        }
        Ok(sorted_unique(out))
    }

    fn newton_plan(&self) -> NewtonPlan {
        // Interleaving (u_g, v_g) pairs brings every coupling within
        // 2*nxi positions: x-neighbors sit 2 apart, y-neighbors 2*nxi apart,
        // and the cross-component coupling 1 apart.
        let mc = self.mesh.n_xy();
        let mut perm = vec![0usize; 2 * mc];
        for g in 0..mc {
            perm[g] = 2 * g;
            perm[mc + g] = 2 * g + 1;
        }
        let k = 2 * self.mesh.nxi();
        NewtonPlan {
            kl: k,
            ku: k,
            perm: Some(perm),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Reference flux built on padded 2D arrays, an independent rendering of
    /// the same scheme used to cross-check the flat indexed implementation.
    fn reference_flux(model: &Model2D, u: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (nxi, nyi) = (model.mesh.nxi(), model.mesh.nyi());
        let (dx, dy, re) = (model.mesh.dx, model.mesh.dy, model.re);
        let pad = |w: &[f64]| {
            let mut a = vec![vec![0.0; nxi + 2]; nyi + 2];
            for j in 0..nyi {
                for i in 0..nxi {
                    a[j + 1][i + 1] = w[j * nxi + i];
                }
            }
            a
        };
        let (up, vp) = (pad(u), pad(v));
        let mut fu = vec![0.0; nxi * nyi];
        let mut fv = vec![0.0; nxi * nyi];
        for j in 1..=nyi {
            for i in 1..=nxi {
                let g = (j - 1) * nxi + (i - 1);
                for (f, w) in [(&mut fu, &up), (&mut fv, &vp)] {
                    f[g] = -up[j][i] * (w[j][i] - w[j][i - 1]) / dx
                        - vp[j][i] * (w[j][i] - w[j - 1][i]) / dy
                        + (w[j][i + 1] - 2.0 * w[j][i] + w[j][i - 1]) / (re * dx * dx)
                        + (w[j + 1][i] - 2.0 * w[j][i] + w[j - 1][i]) / (re * dy * dy);
                }
            }
        }
        (fu, fv)
    }

    fn test_model(nx: usize, ny: usize) -> Model2D {
        Model2D::new(Mesh2D::new(nx, ny).unwrap(), 1.0, 100.0).unwrap()
    }

    #[test]
    fn initial_state_known_values() {
        // nx = ny = 5: interior coordinates 0.25, 0.5, 0.75.
        let model = test_model(5, 5);
        let (u, v) = model.initial_state_2d();
        // (0.25, 0.25): sin(pi/2)^2 = 1 -> value mu = 1.
        assert_abs_diff_eq!(u[0], 1.0, epsilon = 1e-14);
        assert_eq!(u, v);
        // (0.75, 0.75) lies outside the excited box.
        assert_eq!(u[8], 0.0);
        // (0.5, y): sin(pi) = 0.
        assert_abs_diff_eq!(u[1], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn lexicographic_ordering_is_x_fastest() {
        let mesh = Mesh2D::new(6, 5).unwrap();
        assert_eq!(mesh.nxi(), 4);
        assert_eq!(mesh.nyi(), 3);
        let (x0, y0) = mesh.xy(0);
        let (x1, y1) = mesh.xy(1);
        let (x4, y4) = mesh.xy(4);
        assert!(x1 > x0 && (y1 - y0).abs() < 1e-15);
        assert!((x4 - x0).abs() < 1e-15 && y4 > y0);
    }

    #[test]
    fn flux_matches_padded_reference() {
        let model = test_model(7, 6);
        let mc = model.mesh.n_xy();
        let u: Vec<f64> = (0..mc).map(|g| 0.3 + ((g * 7) as f64 * 0.13).sin()).collect();
        let v: Vec<f64> = (0..mc).map(|g| -0.2 + ((g * 3) as f64 * 0.29).cos()).collect();
        let (fu, fv) = model.flux_2d(&u, &v);
        let (ru, rv) = reference_flux(&model, &u, &v);
        for g in 0..mc {
            assert_abs_diff_eq!(fu[g], ru[g], epsilon = 1e-13);
            assert_abs_diff_eq!(fv[g], rv[g], epsilon = 1e-13);
        }
    }

    #[test]
    fn zero_state_has_zero_flux() {
        let model = test_model(8, 8);
        let f = model.flux(&vec![0.0; model.dim()]);
        for x in f.iter() {
            assert_eq!(*x, 0.0);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let model = test_model(6, 5);
        let n = model.dim();
        let w: Vec<f64> = (0..n).map(|g| 0.4 * ((g * 11) as f64 * 0.07).sin() + 0.1).collect();
        let jac = model.flux_jacobian(&w).to_dense();
        let h = 1e-6;
        for j in 0..n {
            let mut up = w.clone();
            let mut dn = w.clone();
            up[j] += h;
            dn[j] -= h;
            let fp = model.flux(&up);
            let fm = model.flux(&dn);
            for i in 0..n {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                let err = (jac[[i, j]] - fd).abs() / fd.abs().max(1.0);
                assert!(err <= 1e-6, "J[{i},{j}] = {} vs fd {fd}", jac[[i, j]]);
            }
        }
    }

    #[test]
    fn stencil_neighbors_cover_both_components() {
        let model = test_model(6, 6);
        let (nxi, mc) = (model.mesh.nxi(), model.mesh.n_xy());
        // Interior point with all four neighbors: g = nxi + 1.
        let g = nxi + 1;
        let got = model.stencil_neighbors(&[g]).unwrap();
        let mut expect = vec![g, g - 1, g + 1, g - nxi, g + nxi, mc + g];
        expect.sort_unstable();
        assert_eq!(got, expect);
        // v-row of a corner point: only east/north exist plus u at the point.
        let got_v = model.stencil_neighbors(&[mc]).unwrap();
        let mut expect_v = vec![mc, mc + 1, mc + nxi, 0];
        expect_v.sort_unstable();
        assert_eq!(got_v, expect_v);
    }

    #[test]
    fn sampled_rows_match_full_flux(){
        let model = test_model(9, 7);
        let n = model.dim();
        let w: Vec<f64> = (0..n).map(|g| ((g * 17) as f64 * 0.041).sin()).collect();
        let rows: Vec<usize> = vec![0, 5, n / 2, n - 1];
        let mut out = vec![0.0; rows.len()];
        model.flux_rows(&FullState(&w), &rows, &mut out);
        let full = model.flux(&w);
        for (k, &r) in rows.iter().enumerate() {
            assert_eq!(out[k], full[r]);
        }
    }

    #[test]
    fn newton_plan_band_covers_all_jacobian_entries() {
        let model = test_model(7, 5);
        let n = model.dim();
        let w: Vec<f64> = (0..n).map(|g| (g as f64 * 0.3).cos()).collect();
        let plan = model.newton_plan();
        let perm = plan.perm.unwrap();
        let jac = model.flux_jacobian(&w);
        for (i, j, _) in jac.iter_entries() {
            let (pi, pj) = (perm[i] as isize, perm[j] as isize);
            assert!(
                pi - pj <= plan.kl as isize && pj - pi <= plan.ku as isize,
                "entry ({i},{j}) falls outside the declared band"
            );
        }
    }
}
