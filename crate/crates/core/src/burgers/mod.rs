//! Semi-discrete Burgers models: first-order upwind advection on uniform
//! grids, written as autonomous ODE systems du/dt = f(u).
//!
//! Both models expose row-wise flux evaluation through [`StateAccess`] so a
//! hyper-reduced solver can evaluate a handful of residual entries without
//! ever materializing the full state.

mod one_d;
mod two_d;

pub use one_d::{Mesh1D, Model1D};
pub use two_d::{Mesh2D, Model2D};

use crate::linalg::CsrMatrix;
use crate::Result;
use ndarray::Array1;

/// Full-order state: length m in 1D, stacked (u; v) of length 2*n_xy in 2D.
pub type StateVector = Array1<f64>;

/// Read-only, index-wise access to a state vector. Implementations may back
/// only a subset of indices; reading an unbacked index is a logic error that
/// implementations surface by panicking.
pub trait StateAccess {
    fn get(&self, i: usize) -> f64;
}

/// Plain full state borrowed as a slice.
pub struct FullState<'a>(pub &'a [f64]);

impl StateAccess for FullState<'_> {
    #[inline]
    fn get(&self, i: usize) -> f64 {
        self.0[i]
    }
}

/// Band structure of the Newton matrices `a0*I - c*J_f` for a model, after an
/// optional symmetric reordering. Entries left outside the band (periodic
/// wrap-around) are handled by the solver's low-rank correction.
#[derive(Clone, Debug)]
pub struct NewtonPlan {
    pub kl: usize,
    pub ku: usize,
    pub perm: Option<Vec<usize>>,
}

/// A parameterized autonomous semi-discrete PDE model.
pub trait SemiDiscreteModel: Send + Sync {
    /// Number of unknowns.
    fn dim(&self) -> usize;

    /// Parametric initial state.
    fn initial_state(&self) -> StateVector;

    /// Full flux vector f(u).
    fn flux(&self, u: &[f64]) -> StateVector;

    /// Flux Jacobian df/du as CSR.
    fn flux_jacobian(&self, u: &[f64]) -> CsrMatrix;

    /// Flux entries at `rows` only, reading just the stencil of each row.
    fn flux_rows(&self, u: &dyn StateAccess, rows: &[usize], out: &mut [f64]);

    /// Jacobian rows at `rows`: per row, (global column, value) pairs sorted
    /// by column.
    fn flux_jacobian_rows(&self, u: &dyn StateAccess, rows: &[usize]) -> Vec<Vec<(usize, f64)>>;

    /// Sorted union of `rows` and every index their flux entries read.
    fn stencil_neighbors(&self, rows: &[usize]) -> Result<Vec<usize>>;

    /// Band/permutation structure for direct Newton solves.
    fn newton_plan(&self) -> NewtonPlan;
}

/// Sorted, deduplicated copy of `v`.
pub(crate) fn sorted_unique(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v.dedup();
    v
}
