//! Small helpers shared by unit, integration, and acceptance tests.
//! Not part of the public API surface proper; kept available so integration
//! tests can build tiny dense models and instrumented state wrappers.

use crate::burgers::{NewtonPlan, SemiDiscreteModel, StateAccess, StateVector};
use crate::linalg::CsrMatrix;
use crate::Result;
use ndarray::{Array1, Array2};
use std::cell::RefCell;
use std::collections::BTreeSet;

/// Dense linear model `f(u) = A u` with a fixed initial state. Useful as an
/// analytically tractable stand-in for the PDE models.
pub struct LinearTestModel {
    pub a: Array2<f64>,
    pub initial: Array1<f64>,
}

impl LinearTestModel {
    pub fn new(a: Array2<f64>, initial: Array1<f64>) -> Self {
        assert_eq!(a.nrows(), a.ncols());
        assert_eq!(a.nrows(), initial.len());
        LinearTestModel { a, initial }
    }

    pub fn diagonal(diag: Vec<f64>) -> Self {
        let n = diag.len();
        let mut a = Array2::zeros((n, n));
        for (i, d) in diag.iter().enumerate() {
            a[[i, i]] = *d;
        }
        LinearTestModel {
            a,
            initial: Array1::ones(n),
        }
    }
}

impl SemiDiscreteModel for LinearTestModel {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn initial_state(&self) -> StateVector {
        self.initial.clone()
    }

    fn flux(&self, u: &[f64]) -> StateVector {
        let u = Array1::from_iter(u.iter().cloned());
        self.a.dot(&u)
    }

    fn flux_jacobian(&self, _u: &[f64]) -> CsrMatrix {
        let n = self.dim();
        let triplets = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j, self.a[[i, j]])))
            .filter(|&(_, _, v)| v != 0.0);
        CsrMatrix::from_triplets(n, n, triplets).unwrap()
    }

    fn flux_rows(&self, u: &dyn StateAccess, rows: &[usize], out: &mut [f64]) {
        for (o, &r) in out.iter_mut().zip(rows) {
            let mut acc = 0.0;
            for j in 0..self.dim() {
                if self.a[[r, j]] != 0.0 {
                    acc += self.a[[r, j]] * u.get(j);
                }
            }
            *o = acc;
        }
    }

    fn flux_jacobian_rows(&self, _u: &dyn StateAccess, rows: &[usize]) -> Vec<Vec<(usize, f64)>> {
        rows.iter()
            .map(|&r| {
                (0..self.dim())
                    .filter(|&j| self.a[[r, j]] != 0.0)
                    .map(|j| (j, self.a[[r, j]]))
                    .collect()
            })
            .collect()
    }

    fn stencil_neighbors(&self, rows: &[usize]) -> Result<Vec<usize>> {
        let mut set: BTreeSet<usize> = BTreeSet::new();
        for &r in rows {
            set.insert(r);
            for j in 0..self.dim() {
                if self.a[[r, j]] != 0.0 {
                    set.insert(j);
                }
            }
        }
        Ok(set.into_iter().collect())
    }

    fn newton_plan(&self) -> NewtonPlan {
        let n = self.dim();
        NewtonPlan {
            kl: n.saturating_sub(1),
            ku: n.saturating_sub(1),
            perm: None,
        }
    }
}

/// State wrapper that records every index read through it. Used to prove a
/// hyper-reduced step touches nothing outside its declared closure.
pub struct TrackingState<'a> {
    pub inner: &'a dyn StateAccess,
    pub accessed: RefCell<BTreeSet<usize>>,
}

impl<'a> TrackingState<'a> {
    pub fn new(inner: &'a dyn StateAccess) -> Self {
        TrackingState {
            inner,
            accessed: RefCell::new(BTreeSet::new()),
        }
    }

    pub fn accessed_indices(&self) -> Vec<usize> {
        self.accessed.borrow().iter().cloned().collect()
    }
}

impl StateAccess for TrackingState<'_> {
    fn get(&self, i: usize) -> f64 {
        self.accessed.borrow_mut().insert(i);
        self.inner.get(i)
    }
}
