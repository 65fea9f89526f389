//! Projection-based reduced-order solvers. A trajectory is evolved in a
//! low-dimensional latent space and mapped back to the full state through a
//! representation: an orthonormal linear basis or a trained decoder manifold.
//! Galerkin variants integrate a projected latent ODE; LSPG variants minimize
//! the fully discrete step residual with a damped Gauss-Newton method.

use crate::autoencoder::{MaskMatrix, MaskedMatrix, ScaledDecoder, ScaledEncoder};
use crate::burgers::{SemiDiscreteModel, StateVector};
use crate::linalg::{least_squares_multi, least_squares_view, solve_dense};
use crate::timestep::{
    newton_step_solve, Integrator, LinearMultistepScheme, TimeGrid, NEWTON_MAX_ITER, NEWTON_TOL,
};
use crate::{Error, Result};
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use std::time::Instant;

/// Gauss-Newton stopping tolerance on the gradient norm, relative to
/// max(1, initial gradient norm).
pub const GAUSS_NEWTON_TOL: f64 = 1e-8;
/// Gauss-Newton iteration budget per minimization.
pub const GAUSS_NEWTON_MAX_ITER: usize = 20;
/// A Gauss-Newton update shorter than this counts as converged.
pub const GAUSS_NEWTON_STEP_FLOOR: f64 = 1e-12;
/// Backtracking line-search budget: step scales 1, 1/2, ..., 1/2^10.
pub const LINE_SEARCH_MAX_HALVINGS: usize = 10;

/// One decoder manifold for a contiguous block of state entries, with its
/// matching encoder. The 2D model reduces each velocity component with its
/// own trained pair, so a representation holds one block per component.
#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub encoder: ScaledEncoder,
    pub decoder: ScaledDecoder,
}

impl DecoderBlock {
    /// Wrap an orthonormal basis as an identity-activation decoder pair, so
    /// that g(y) = Phi y and h(w) = Phi^T w exactly. Used to validate the
    /// manifold solvers against their linear counterparts.
    pub fn from_basis(phi: &Array2<f64>, u_ref: ArrayView1<f64>) -> Result<Self> {
        let (m, f) = (phi.nrows(), phi.ncols());
        if u_ref.len() != m {
            return Err(Error::dim(format!(
                "basis has {m} rows but the reference state has {} entries",
                u_ref.len()
            )));
        }
        if f == 0 || f > m {
            return Err(Error::invalid(format!(
                "basis width must lie in 1..={m}, got {f}"
            )));
        }
        let activation = crate::autoencoder::Activation::Identity;
        let encoder = ScaledEncoder {
            w1: phi.t().to_owned(),
            b1: Array1::zeros(f),
            w2: Array2::eye(f),
            b2: Array1::zeros(f),
            u_ref: u_ref.to_owned(),
            activation,
        };
        let mask = MaskMatrix::from_rows(f, vec![(0..f).collect(); m])?;
        let mut w2 = MaskedMatrix::zeros(&mask);
        {
            let values = w2.values_mut();
            let mut k = 0;
            for row in phi.rows() {
                for &v in row {
                    values[k] = v;
                    k += 1;
                }
            }
        }
        let decoder = ScaledDecoder {
            w1: Array2::eye(f),
            b1: Array1::zeros(f),
            w2,
            u_ref: u_ref.to_owned(),
            activation,
        };
        Ok(DecoderBlock { encoder, decoder })
    }

    fn output_dim(&self) -> usize {
        self.decoder.output_dim()
    }

    fn latent_dim(&self) -> usize {
        self.decoder.latent_dim()
    }

    fn validate(&self, index: usize) -> Result<()> {
        let m = self.decoder.output_dim();
        let f = self.decoder.latent_dim();
        if self.encoder.w1.ncols() != m || self.encoder.u_ref.len() != m {
            return Err(Error::dim(format!(
                "block {index}: encoder input dimension disagrees with decoder output dimension {m}"
            )));
        }
        if self.encoder.w2.nrows() != f {
            return Err(Error::dim(format!(
                "block {index}: encoder latent width {} disagrees with decoder latent width {f}",
                self.encoder.w2.nrows()
            )));
        }
        if f > m {
            return Err(Error::invalid(format!(
                "block {index}: latent width {f} exceeds state width {m}"
            )));
        }
        Ok(())
    }
}

/// Map between latent coordinates and full states, u = u_ref + Phi y on a
/// linear subspace or u = u_ref + g(y) on a decoder manifold. Both kinds are
/// block-diagonal over contiguous state ranges (one block per solution
/// component), and latent coordinates concatenate in block order.
#[derive(Clone, Debug)]
pub enum Representation {
    Linear {
        /// Orthonormal basis per block, each m_c x f_c.
        blocks: Vec<Array2<f64>>,
        /// Reference state, length sum of m_c.
        u_ref: StateVector,
    },
    Manifold {
        /// Trained encoder/decoder pair per block.
        blocks: Vec<DecoderBlock>,
    },
}

impl Representation {
    /// Single-block linear representation.
    pub fn linear(phi: Array2<f64>, u_ref: StateVector) -> Result<Self> {
        Self::linear_blocks(vec![phi], u_ref)
    }

    /// Block-diagonal linear representation; `u_ref` spans all blocks.
    pub fn linear_blocks(blocks: Vec<Array2<f64>>, u_ref: StateVector) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::invalid("a representation needs at least one block"));
        }
        let mut m = 0;
        for (c, phi) in blocks.iter().enumerate() {
            if phi.ncols() == 0 || phi.ncols() > phi.nrows() {
                return Err(Error::invalid(format!(
                    "block {c}: basis width must lie in 1..={}, got {}",
                    phi.nrows(),
                    phi.ncols()
                )));
            }
            m += phi.nrows();
        }
        if u_ref.len() != m {
            return Err(Error::dim(format!(
                "reference state has {} entries but the blocks span {m}",
                u_ref.len()
            )));
        }
        Ok(Representation::Linear { blocks, u_ref })
    }

    /// Manifold representation from trained blocks.
    pub fn manifold(blocks: Vec<DecoderBlock>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::invalid("a representation needs at least one block"));
        }
        for (c, block) in blocks.iter().enumerate() {
            block.validate(c)?;
        }
        Ok(Representation::Manifold { blocks })
    }

    /// Single-block manifold wrapping an orthonormal basis as a linear
    /// decoder; agrees with [`Representation::linear`] on the same inputs.
    pub fn manifold_from_basis(phi: &Array2<f64>, u_ref: ArrayView1<f64>) -> Result<Self> {
        Self::manifold(vec![DecoderBlock::from_basis(phi, u_ref)?])
    }

    /// Total state dimension (sum over blocks).
    pub fn full_dim(&self) -> usize {
        match self {
            Representation::Linear { blocks, .. } => blocks.iter().map(|p| p.nrows()).sum(),
            Representation::Manifold { blocks } => blocks.iter().map(|b| b.output_dim()).sum(),
        }
    }

    /// Total latent dimension (sum over blocks).
    pub fn latent_dim(&self) -> usize {
        match self {
            Representation::Linear { blocks, .. } => blocks.iter().map(|p| p.ncols()).sum(),
            Representation::Manifold { blocks } => blocks.iter().map(|b| b.latent_dim()).sum(),
        }
    }

    /// Reference state the representation perturbs around.
    pub fn u_ref(&self) -> StateVector {
        match self {
            Representation::Linear { u_ref, .. } => u_ref.clone(),
            Representation::Manifold { blocks } => {
                let mut out = Array1::zeros(self.full_dim());
                let mut r0 = 0;
                for block in blocks {
                    let r1 = r0 + block.output_dim();
                    out.slice_mut(s![r0..r1]).assign(&block.decoder.u_ref);
                    r0 = r1;
                }
                out
            }
        }
    }

    /// (state range, latent range) per block.
    pub(crate) fn block_ranges(&self) -> Vec<((usize, usize), (usize, usize))> {
        let dims: Vec<(usize, usize)> = match self {
            Representation::Linear { blocks, .. } => {
                blocks.iter().map(|p| (p.nrows(), p.ncols())).collect()
            }
            Representation::Manifold { blocks } => blocks
                .iter()
                .map(|b| (b.output_dim(), b.latent_dim()))
                .collect(),
        };
        let (mut r0, mut l0) = (0, 0);
        dims.into_iter()
            .map(|(m, f)| {
                let out = ((r0, r0 + m), (l0, l0 + f));
                r0 += m;
                l0 += f;
                out
            })
            .collect()
    }

    fn check_latent(&self, y: ArrayView1<f64>) -> Result<()> {
        if y.len() != self.latent_dim() {
            return Err(Error::dim(format!(
                "latent vector has {} entries but the representation expects {}",
                y.len(),
                self.latent_dim()
            )));
        }
        Ok(())
    }

    /// Reconstruct the full state for latent coordinates y.
    pub fn decode(&self, y: ArrayView1<f64>) -> Result<StateVector> {
        self.check_latent(y)?;
        let mut out = Array1::zeros(self.full_dim());
        match self {
            Representation::Linear { blocks, u_ref } => {
                out.assign(u_ref);
                for (phi, ((r0, r1), (l0, l1))) in blocks.iter().zip(self.block_ranges()) {
                    let lifted = phi.dot(&y.slice(s![l0..l1]));
                    out.slice_mut(s![r0..r1]).zip_mut_with(&lifted, |o, &v| *o += v);
                }
            }
            Representation::Manifold { blocks } => {
                for (block, ((r0, r1), (l0, l1))) in blocks.iter().zip(self.block_ranges()) {
                    let rebuilt = block.decoder.reconstruct(y.slice(s![l0..l1]));
                    out.slice_mut(s![r0..r1]).assign(&rebuilt);
                }
            }
        }
        Ok(out)
    }

    /// Latent coordinates for a full state: Phi^T (u - u_ref) per linear
    /// block, h(u - u_ref) per manifold block.
    pub fn encode(&self, u: ArrayView1<f64>) -> Result<Array1<f64>> {
        if u.len() != self.full_dim() {
            return Err(Error::dim(format!(
                "state has {} entries but the representation expects {}",
                u.len(),
                self.full_dim()
            )));
        }
        let mut out = Array1::zeros(self.latent_dim());
        match self {
            Representation::Linear { blocks, u_ref } => {
                for (phi, ((r0, r1), (l0, l1))) in blocks.iter().zip(self.block_ranges()) {
                    let shifted = &u.slice(s![r0..r1]) - &u_ref.slice(s![r0..r1]);
                    out.slice_mut(s![l0..l1]).assign(&phi.t().dot(&shifted));
                }
            }
            Representation::Manifold { blocks } => {
                for (block, ((r0, r1), (l0, l1))) in blocks.iter().zip(self.block_ranges()) {
                    let code = block.encoder.encode(u.slice(s![r0..r1]));
                    out.slice_mut(s![l0..l1]).assign(&code);
                }
            }
        }
        Ok(out)
    }

    /// Dense Jacobian of the latent-to-state map at y (block-diagonal, full
    /// dim x latent dim): the basis itself for linear blocks, the decoder
    /// Jacobian for manifold blocks.
    pub fn jacobian(&self, y: ArrayView1<f64>) -> Result<Array2<f64>> {
        self.check_latent(y)?;
        let mut out = Array2::zeros((self.full_dim(), self.latent_dim()));
        match self {
            Representation::Linear { blocks, .. } => {
                for (phi, ((r0, r1), (l0, l1))) in blocks.iter().zip(self.block_ranges()) {
                    out.slice_mut(s![r0..r1, l0..l1]).assign(phi);
                }
            }
            Representation::Manifold { blocks } => {
                for (block, ((r0, r1), (l0, l1))) in blocks.iter().zip(self.block_ranges()) {
                    let jac = block.decoder.jacobian(y.slice(s![l0..l1]));
                    out.slice_mut(s![r0..r1, l0..l1]).assign(&jac);
                }
            }
        }
        Ok(out)
    }

    /// Apply the pseudo-inverse of the map Jacobian at y to a full-space
    /// vector, blockwise: Phi^T v for orthonormal linear blocks, a QR least
    /// squares solve against the decoder Jacobian for manifold blocks.
    fn pinv_apply(&self, y: ArrayView1<f64>, v: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_latent(y)?;
        let mut out = Array1::zeros(self.latent_dim());
        match self {
            Representation::Linear { blocks, .. } => {
                for (phi, ((r0, r1), (l0, l1))) in blocks.iter().zip(self.block_ranges()) {
                    out.slice_mut(s![l0..l1])
                        .assign(&phi.t().dot(&v.slice(s![r0..r1])));
                }
            }
            Representation::Manifold { blocks } => {
                for (c, (block, ((r0, r1), (l0, l1)))) in
                    blocks.iter().zip(self.block_ranges()).enumerate()
                {
                    let jac = block.decoder.jacobian(y.slice(s![l0..l1]));
                    let sol = least_squares_view(jac.view(), v.slice(s![r0..r1]))
                        .map_err(|e| degenerate_tangent(c, e))?;
                    out.slice_mut(s![l0..l1]).assign(&sol);
                }
            }
        }
        Ok(out)
    }

    /// Same pseudo-inverse application for every column of a full-space
    /// matrix, returning latent dim x ncols.
    fn pinv_apply_matrix(&self, y: ArrayView1<f64>, b: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_latent(y)?;
        let mut out = Array2::zeros((self.latent_dim(), b.ncols()));
        match self {
            Representation::Linear { blocks, .. } => {
                for (phi, ((r0, r1), (l0, l1))) in blocks.iter().zip(self.block_ranges()) {
                    out.slice_mut(s![l0..l1, ..])
                        .assign(&phi.t().dot(&b.slice(s![r0..r1, ..])));
                }
            }
            Representation::Manifold { blocks } => {
                for (c, (block, ((r0, r1), (l0, l1)))) in
                    blocks.iter().zip(self.block_ranges()).enumerate()
                {
                    let jac = block.decoder.jacobian(y.slice(s![l0..l1]));
                    let sol = least_squares_multi(jac.view(), b.slice(s![r0..r1, ..]))
                        .map_err(|e| degenerate_tangent(c, e))?;
                    out.slice_mut(s![l0..l1, ..]).assign(&sol);
                }
            }
        }
        Ok(out)
    }
}

fn degenerate_tangent(block: usize, e: Error) -> Error {
    Error::Numerical(format!(
        "manifold tangent is rank-deficient at the current latent state (block {block}): {e}"
    ))
}

/// Which reduced system is solved: Galerkin projects the semi-discrete
/// velocity onto the representation tangent; LSPG minimizes the fully
/// discrete step residual over the next latent state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Projection {
    Galerkin,
    Lspg,
}

/// A reduced solve: model, time integrator, time grid, latent-to-state
/// representation, and projection kind.
pub struct RomProblem<'a> {
    pub model: &'a dyn SemiDiscreteModel,
    pub integrator: Integrator,
    pub grid: TimeGrid,
    pub representation: Representation,
    pub projection: Projection,
}

impl std::fmt::Debug for RomProblem<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RomProblem")
            .field("model_dim", &self.model.dim())
            .field("integrator", &self.integrator.name())
            .field("grid", &self.grid)
            .field("latent_dim", &self.representation.latent_dim())
            .field("projection", &self.projection)
            .finish()
    }
}

impl<'a> RomProblem<'a> {
    pub fn new(
        model: &'a dyn SemiDiscreteModel,
        integrator: Integrator,
        grid: TimeGrid,
        representation: Representation,
        projection: Projection,
    ) -> Result<Self> {
        let problem = RomProblem {
            model,
            integrator,
            grid,
            representation,
            projection,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn validate(&self) -> Result<()> {
        if self.representation.full_dim() != self.model.dim() {
            return Err(Error::dim(format!(
                "representation spans {} state entries but the model has {}",
                self.representation.full_dim(),
                self.model.dim()
            )));
        }
        if self.projection == Projection::Lspg {
            match &self.integrator {
                Integrator::Lmm(scheme) if scheme.is_implicit() => {}
                _ => {
                    return Err(Error::invalid(
                        "LSPG needs an implicit multistep scheme; with an explicit integrator \
                         it coincides with the Galerkin projection",
                    ))
                }
            }
        }
        Ok(())
    }
}

/// Latent trajectory with its reconstructed full states. Every state equals
/// the representation applied to the latent state of the same index; the
/// per-step counts record inner Newton or Gauss-Newton iterations (zero for
/// explicit steps).
#[derive(Clone, Debug)]
pub struct RomTrajectory {
    pub latents: Vec<Array1<f64>>,
    pub states: Vec<StateVector>,
    pub iterations: Vec<usize>,
    pub grid: TimeGrid,
    pub wall_seconds: f64,
}

/// Latent coordinates of the initial condition: Phi^T (u0 - u_ref) on a
/// linear subspace, h(u0 - u_ref) on a manifold.
pub fn initial_latent(problem: &RomProblem, u0: &StateVector) -> Result<Array1<f64>> {
    problem.representation.encode(u0.view())
}

/// Galerkin latent velocity on a linear subspace:
/// dy/dt = Phi^T f(u_ref + Phi y).
pub fn ls_galerkin_rhs(problem: &RomProblem, y: ArrayView1<f64>) -> Result<Array1<f64>> {
    if !matches!(problem.representation, Representation::Linear { .. }) {
        return Err(Error::invalid(
            "ls_galerkin_rhs needs a linear representation",
        ));
    }
    galerkin_rhs(problem, y)
}

/// Galerkin latent velocity on a decoder manifold:
/// dy/dt = J_g(y)^+ f(u_ref + g(y)), with the pseudo-inverse applied through
/// a QR factorization of the decoder Jacobian.
pub fn nm_galerkin_rhs(problem: &RomProblem, y: ArrayView1<f64>) -> Result<Array1<f64>> {
    if !matches!(problem.representation, Representation::Manifold { .. }) {
        return Err(Error::invalid(
            "nm_galerkin_rhs needs a manifold representation",
        ));
    }
    galerkin_rhs(problem, y)
}

/// Projected latent velocity for either representation kind.
fn galerkin_rhs(problem: &RomProblem, y: ArrayView1<f64>) -> Result<Array1<f64>> {
    let u = problem.representation.decode(y)?;
    let f = problem.model.flux(u.as_slice().expect("contiguous state"));
    problem.representation.pinv_apply(y, f.view())
}

/// Derivative of the projected latent velocity, with the pseudo-inverse
/// factor held fixed: J^+(y) J_f(u(y)) J(y). Exact for linear blocks; for
/// manifold blocks it drops the curvature of the decoder, which is the usual
/// chain-rule approximation for Newton on the reduced system.
fn galerkin_rhs_jacobian(problem: &RomProblem, y: ArrayView1<f64>) -> Result<Array2<f64>> {
    let rep = &problem.representation;
    let u = rep.decode(y)?;
    let w = rep.jacobian(y)?;
    let jf = problem.model.flux_jacobian(u.as_slice().expect("contiguous state"));
    let p = jf.matmul_dense(&w)?;
    rep.pinv_apply_matrix(y, p.view())
}

/// Minimize half the squared residual norm by damped Gauss-Newton steps from
/// `start`. Each step solves min ||J d + r||_2 by QR and backtracks with up
/// to [`LINE_SEARCH_MAX_HALVINGS`] halvings until the objective strictly
/// decreases. Stops when the gradient norm ||J^T r|| falls to `tol` times
/// max(1, its starting value), or when the proposed update is shorter than
/// [`GAUSS_NEWTON_STEP_FLOOR`]. Returns the minimizer and the number of
/// accepted iterations.
pub fn gauss_newton(
    residual: impl FnMut(ArrayView1<f64>) -> Result<Array1<f64>>,
    jacobian: impl FnMut(ArrayView1<f64>) -> Result<Array2<f64>>,
    start: ArrayView1<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<(Array1<f64>, usize)> {
    gauss_newton_traced(residual, jacobian, start, tol, max_iter, None)
}

/// [`gauss_newton`] with the objective value at the start and after every
/// accepted iteration appended to `trace`.
pub(crate) fn gauss_newton_traced(
    mut residual: impl FnMut(ArrayView1<f64>) -> Result<Array1<f64>>,
    mut jacobian: impl FnMut(ArrayView1<f64>) -> Result<Array2<f64>>,
    start: ArrayView1<f64>,
    tol: f64,
    max_iter: usize,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<(Array1<f64>, usize)> {
    let mut y = start.to_owned();
    let mut r = residual(y.view())?;
    let mut objective = 0.5 * r.dot(&r);
    if let Some(t) = trace.as_deref_mut() {
        t.push(objective);
    }
    let mut jac = jacobian(y.view())?;
    let mut grad = jac.t().dot(&r);
    let target = tol * grad.dot(&grad).sqrt().max(1.0);
    let mut iters = 0usize;
    loop {
        if grad.dot(&grad).sqrt() <= target {
            return Ok((y, iters));
        }
        if iters >= max_iter {
            return Err(Error::Convergence(format!(
                "Gauss-Newton gradient norm {:.3e} still above {target:.3e} after {max_iter} iterations",
                grad.dot(&grad).sqrt()
            )));
        }
        let mut delta = least_squares_view(jac.view(), r.view())?;
        delta.mapv_inplace(|d| -d);
        if delta.dot(&delta).sqrt() <= GAUSS_NEWTON_STEP_FLOOR {
            return Ok((y, iters));
        }
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=LINE_SEARCH_MAX_HALVINGS {
            let mut candidate = y.clone();
            candidate.zip_mut_with(&delta, |c, &d| *c += scale * d);
            let r_candidate = residual(candidate.view())?;
            let objective_candidate = 0.5 * r_candidate.dot(&r_candidate);
            if objective_candidate < objective {
                y = candidate;
                r = r_candidate;
                objective = objective_candidate;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            return Err(Error::Convergence(
                "Gauss-Newton line search could not decrease the objective".into(),
            ));
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(objective);
        }
        jac = jacobian(y.view())?;
        grad = jac.t().dot(&r);
        iters += 1;
    }
}

pub(crate) fn lmm_scheme<'p>(problem: &'p RomProblem) -> Result<&'p LinearMultistepScheme> {
    match &problem.integrator {
        Integrator::Lmm(scheme) => Ok(scheme),
        Integrator::MidpointRk => Err(Error::invalid(
            "this operation needs a linear multistep integrator",
        )),
    }
}

/// One LSPG step: the next latent state minimizes half the squared norm of
/// the scheme residual with every history level reconstructed through the
/// representation, Gauss-Newton started from the newest history entry.
/// `history[j]` is the latent state j+1 steps back (newest first) and must
/// cover the scheme depth. Returns the new latent state and the iteration
/// count.
pub fn lspg_step(problem: &RomProblem, history: &[Array1<f64>]) -> Result<(Array1<f64>, usize)> {
    let scheme = lmm_scheme(problem)?;
    if !scheme.is_implicit() {
        return Err(Error::invalid(
            "LSPG needs an implicit multistep scheme; with an explicit integrator \
             it coincides with the Galerkin projection",
        ));
    }
    let k = scheme.steps();
    if history.len() < k {
        return Err(Error::dim(format!(
            "{} needs {k} history levels, got {}",
            scheme.name,
            history.len()
        )));
    }
    let mut constant: StateVector = Array1::zeros(problem.model.dim());
    for j in 1..=k {
        let u = problem.representation.decode(history[j - 1].view())?;
        let (aj, bj) = (scheme.alpha[j], scheme.beta[j]);
        constant.zip_mut_with(&u, |c, &v| *c += aj * v);
        if bj != 0.0 {
            let f = problem.model.flux(u.as_slice().expect("contiguous state"));
            constant.zip_mut_with(&f, |c, &fv| *c -= problem.grid.dt * bj * fv);
        }
    }
    lspg_step_from_constant(problem, scheme, &constant, &history[0])
}

/// LSPG step with the history contribution already accumulated into
/// `constant`, so the residual is a0 u(y) + constant - dt b0 f(u(y)).
fn lspg_step_from_constant(
    problem: &RomProblem,
    scheme: &LinearMultistepScheme,
    constant: &StateVector,
    y_prev: &Array1<f64>,
) -> Result<(Array1<f64>, usize)> {
    let (a0, b0) = (scheme.alpha[0], scheme.beta[0]);
    let dt = problem.grid.dt;
    let rep = &problem.representation;
    let model = problem.model;
    let residual = |y: ArrayView1<f64>| -> Result<Array1<f64>> {
        let u = rep.decode(y)?;
        let f = model.flux(u.as_slice().expect("contiguous state"));
        let mut r = constant.clone();
        r.zip_mut_with(&u, |ri, &ui| *ri += a0 * ui);
        r.zip_mut_with(&f, |ri, &fi| *ri -= dt * b0 * fi);
        Ok(r)
    };
    let jacobian = |y: ArrayView1<f64>| -> Result<Array2<f64>> {
        let u = rep.decode(y)?;
        let w = rep.jacobian(y)?;
        let jf = model.flux_jacobian(u.as_slice().expect("contiguous state"));
        let jw = jf.matmul_dense(&w)?;
        let mut out = w;
        out *= a0;
        out.zip_mut_with(&jw, |oi, &ji| *oi -= dt * b0 * ji);
        Ok(out)
    };
    gauss_newton(
        residual,
        jacobian,
        y_prev.view(),
        GAUSS_NEWTON_TOL,
        GAUSS_NEWTON_MAX_ITER,
    )
}

pub(crate) fn at_step(n: usize, e: Error) -> Error {
    match e {
        Error::Convergence(msg) => Error::Convergence(format!("step {n}: {msg}")),
        Error::Numerical(msg) => Error::Numerical(format!("step {n}: {msg}")),
        other => other,
    }
}

/// March the reduced problem over its time grid. Galerkin integrates the
/// projected latent ODE with the configured integrator (implicit steps via
/// Newton on the latent system); LSPG minimizes the step residual at every
/// step. Multistep schemes start with backward Euler until enough history
/// exists. A grid with zero steps yields only the reconstructed initial
/// state. The reported wall time covers the stepping loop only.
pub fn run_rom(problem: &RomProblem) -> Result<RomTrajectory> {
    problem.validate()?;
    let u0 = problem.model.initial_state();
    let y0 = problem.representation.encode(u0.view())?;
    let mut latents = vec![y0];
    let mut states = vec![problem.representation.decode(latents[0].view())?];
    let mut iterations: Vec<usize> = Vec::with_capacity(problem.grid.nt);
    let start = Instant::now();
    match problem.projection {
        Projection::Lspg => {
            run_lspg(problem, &mut latents, &mut states, &mut iterations)?;
        }
        Projection::Galerkin => {
            run_galerkin(problem, &mut latents, &mut states, &mut iterations)?;
        }
    }
    Ok(RomTrajectory {
        latents,
        states,
        iterations,
        grid: problem.grid,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

fn run_lspg(
    problem: &RomProblem,
    latents: &mut Vec<Array1<f64>>,
    states: &mut Vec<StateVector>,
    iterations: &mut Vec<usize>,
) -> Result<()> {
    let scheme = lmm_scheme(problem)?;
    let be = LinearMultistepScheme::backward_euler();
    let model = problem.model;
    let dt = problem.grid.dt;
    let mut flux_cache: Vec<StateVector> =
        vec![model.flux(states[0].as_slice().expect("contiguous state"))];
    for n in 1..=problem.grid.nt {
        let effective = if n >= scheme.steps() { scheme } else { &be };
        let k = effective.steps();
        let mut constant: StateVector = Array1::zeros(model.dim());
        for j in 1..=k {
            let u = &states[states.len() - j];
            let (aj, bj) = (effective.alpha[j], effective.beta[j]);
            constant.zip_mut_with(u, |c, &v| *c += aj * v);
            if bj != 0.0 {
                constant.zip_mut_with(&flux_cache[j - 1], |c, &fv| *c -= dt * bj * fv);
            }
        }
        let (y, iters) =
            lspg_step_from_constant(problem, effective, &constant, latents.last().unwrap())
                .map_err(|e| at_step(n, e))?;
        let u = problem.representation.decode(y.view())?;
        flux_cache.insert(0, model.flux(u.as_slice().expect("contiguous state")));
        flux_cache.truncate(scheme.steps().max(1));
        latents.push(y);
        states.push(u);
        iterations.push(iters);
    }
    Ok(())
}

fn run_galerkin(
    problem: &RomProblem,
    latents: &mut Vec<Array1<f64>>,
    states: &mut Vec<StateVector>,
    iterations: &mut Vec<usize>,
) -> Result<()> {
    let dt = problem.grid.dt;
    let f_dim = problem.representation.latent_dim();
    match &problem.integrator {
        Integrator::MidpointRk => {
            for n in 1..=problem.grid.nt {
                let y = latents.last().unwrap();
                let step = (|| -> Result<Array1<f64>> {
                    let k1 = galerkin_rhs(problem, y.view())?;
                    let mut mid = y.clone();
                    mid.zip_mut_with(&k1, |mi, &k| *mi += 0.5 * dt * k);
                    let k2 = galerkin_rhs(problem, mid.view())?;
                    let mut next = y.clone();
                    next.zip_mut_with(&k2, |ni, &k| *ni += dt * k);
                    Ok(next)
                })()
                .map_err(|e| at_step(n, e))?;
                states.push(problem.representation.decode(step.view())?);
                latents.push(step);
                iterations.push(0);
            }
        }
        Integrator::Lmm(scheme) => {
            let be = LinearMultistepScheme::backward_euler();
            // Latent velocities of past states are only needed when some
            // history level carries a nonzero beta weight.
            let needs_velocity_history = scheme.beta.iter().skip(1).any(|&b| b != 0.0);
            let mut velocity_cache: Vec<Array1<f64>> = if needs_velocity_history {
                vec![galerkin_rhs(problem, latents[0].view()).map_err(|e| at_step(0, e))?]
            } else {
                Vec::new()
            };
            for n in 1..=problem.grid.nt {
                let effective = if n >= scheme.steps() { scheme } else { &be };
                let k = effective.steps();
                let mut constant: Array1<f64> = Array1::zeros(f_dim);
                for j in 1..=k {
                    let yj = &latents[latents.len() - j];
                    let (aj, bj) = (effective.alpha[j], effective.beta[j]);
                    constant.zip_mut_with(yj, |c, &v| *c += aj * v);
                    if bj != 0.0 {
                        constant.zip_mut_with(&velocity_cache[j - 1], |c, &fv| {
                            *c -= dt * bj * fv
                        });
                    }
                }
                let (a0, b0) = (effective.alpha[0], effective.beta[0]);
                let (y, iters) = if b0 == 0.0 {
                    (constant.mapv(|c| -c / a0), 0)
                } else {
                    let residual = |y: &StateVector| -> Result<StateVector> {
                        let velocity = galerkin_rhs(problem, y.view())?;
                        let mut r = constant.clone();
                        r.zip_mut_with(y, |ri, &yi| *ri += a0 * yi);
                        r.zip_mut_with(&velocity, |ri, &v| *ri -= dt * b0 * v);
                        Ok(r)
                    };
                    let solve_linearized = |y: &StateVector, r: &StateVector| -> Result<StateVector> {
                        let mut jac = galerkin_rhs_jacobian(problem, y.view())?;
                        jac *= -dt * b0;
                        for i in 0..f_dim {
                            jac[[i, i]] += a0;
                        }
                        solve_dense(jac.view(), r.view())
                    };
                    newton_step_solve(
                        residual,
                        solve_linearized,
                        latents.last().unwrap(),
                        NEWTON_TOL,
                        NEWTON_MAX_ITER,
                    )
                    .map_err(|e| at_step(n, e))?
                };
                if needs_velocity_history {
                    velocity_cache
                        .insert(0, galerkin_rhs(problem, y.view()).map_err(|e| at_step(n, e))?);
                    velocity_cache.truncate(scheme.steps().max(1));
                }
                states.push(problem.representation.decode(y.view())?);
                latents.push(y);
                iterations.push(iters);
            }
        }
    }
    Ok(())
}
