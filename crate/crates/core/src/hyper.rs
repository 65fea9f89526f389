//! Gappy-POD hyper-reduction: greedy oversampled selection of residual sample
//! rows, the oblique projection operator built on them, the flux stencil
//! closure around the sample set, and reduced solvers whose per-step cost
//! scales with the closure size instead of the full state dimension.

use crate::burgers::{SemiDiscreteModel, StateAccess};
use crate::linalg::{
    least_squares_multi, least_squares_view, pseudo_inverse_view, solve_dense, thin_svd_view,
};
use crate::pod::{compute_pod_basis, SnapshotMatrix};
use crate::rom::{
    at_step, gauss_newton, lmm_scheme, Projection, Representation, RomProblem, RomTrajectory,
    GAUSS_NEWTON_MAX_ITER, GAUSS_NEWTON_TOL,
};
use crate::subnet::{extract_subnet_scaled, subnet_forward, subnet_jacobian, SubnetDecoder};
use crate::timestep::{
    newton_step_solve, Integrator, LinearMultistepScheme, NEWTON_MAX_ITER, NEWTON_TOL,
};
use crate::{Error, Result};
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use std::time::Instant;

/// Largest accepted condition number of the sampled residual basis; beyond
/// this the oblique projection amplifies sampled noise past any useful level.
pub const MAX_SAMPLING_CONDITION: f64 = 1e10;

/// Strictly increasing state indices at which residual entries are evaluated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleIndexSet {
    indices: Vec<usize>,
    state_dim: usize,
}

impl SampleIndexSet {
    /// Sorts `indices` and validates them: nonempty, distinct, within
    /// `0..state_dim`.
    pub fn new(mut indices: Vec<usize>, state_dim: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::invalid("a sample set needs at least one index"));
        }
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("sample indices must be distinct"));
        }
        let last = *indices.last().unwrap();
        if last >= state_dim {
            return Err(Error::invalid(format!(
                "sample index {last} out of range for state dimension {state_dim}"
            )));
        }
        Ok(SampleIndexSet { indices, state_dim })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }
}

fn gather(v: ArrayView1<f64>, idx: &[usize]) -> Array1<f64> {
    Array1::from_iter(idx.iter().map(|&i| v[i]))
}

fn gather_rows(a: ArrayView2<f64>, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((idx.len(), a.ncols()));
    for (k, &i) in idx.iter().enumerate() {
        out.row_mut(k).assign(&a.row(i));
    }
    out
}

/// Greedy sample rows in pick order. Picks cycle over the basis columns; each
/// pick adds the row where the current column is worst reconstructed, in the
/// least-squares sense, from the rows chosen so far (ties to the smallest
/// index). During the first cycle column j is reconstructed in the span of
/// the j preceding columns, which reproduces the classic interpolation-point
/// selection; later cycles reconstruct against the whole basis and oversample.
pub(crate) fn greedy_pick_order(phi_r: ArrayView2<f64>, n_z: usize) -> Result<Vec<usize>> {
    let (m, n_r) = phi_r.dim();
    if n_r == 0 {
        return Err(Error::invalid(
            "greedy selection needs at least one basis column",
        ));
    }
    if phi_r.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("basis entries must be finite"));
    }
    if n_z < n_r || n_z > m {
        return Err(Error::invalid(format!(
            "sample count must lie in {n_r}..={m}, got {n_z}"
        )));
    }
    let mut chosen: Vec<usize> = Vec::with_capacity(n_z);
    let mut taken = vec![false; m];
    for l in 0..n_z {
        let col = phi_r.column(l % n_r).to_owned();
        let width = l.min(n_r);
        let residual = if width == 0 {
            col
        } else {
            let basis = phi_r.slice(s![.., ..width]);
            let rows = gather_rows(basis, &chosen);
            let rhs = gather(col.view(), &chosen);
            let coeffs = least_squares_view(rows.view(), rhs.view()).map_err(|e| match e {
                Error::Numerical(msg) => {
                    Error::numerical(format!("greedy selection failed at pick {l}: {msg}"))
                }
                other => other,
            })?;
            &col - &basis.dot(&coeffs)
        };
        let mut best = usize::MAX;
        let mut best_val = f64::NEG_INFINITY;
        for (i, &r) in residual.iter().enumerate() {
            if !taken[i] && r.abs() > best_val {
                best = i;
                best_val = r.abs();
            }
        }
        chosen.push(best);
        taken[best] = true;
    }
    Ok(chosen)
}

/// Greedy selection of `n_z` residual sample rows for the basis `phi_r`.
/// Picks cycle over the basis columns, each time adding the row where the
/// current column is worst reconstructed from the already-chosen rows; ties
/// go to the smallest index. The first `n_r` picks reproduce the classic
/// interpolation selection, further picks oversample.
pub fn greedy_select_indices(phi_r: ArrayView2<f64>, n_z: usize) -> Result<SampleIndexSet> {
    let order = greedy_pick_order(phi_r, n_z)?;
    SampleIndexSet::new(order, phi_r.nrows())
}

/// Oblique gappy projector P = Phi_r pinv(Z^T Phi_r) Z^T assembled from a
/// residual basis and a sample set. Only the small factors are stored; the
/// full m x m projector is never formed.
#[derive(Debug, Clone)]
pub struct HyperReductionOperator {
    /// Residual basis with orthonormal columns, m x n_r.
    pub phi_r: Array2<f64>,
    /// Rows at which residuals are evaluated.
    pub samples: SampleIndexSet,
    /// Sampled basis Z^T Phi_r, n_z x n_r.
    pub sampled_basis: Array2<f64>,
    /// Pseudo-inverse of the sampled basis, n_r x n_z.
    pub pinv: Array2<f64>,
}

impl HyperReductionOperator {
    pub fn full_dim(&self) -> usize {
        self.phi_r.nrows()
    }

    pub fn basis_width(&self) -> usize {
        self.phi_r.ncols()
    }

    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }

    /// Least-squares coefficients of a sampled residual in the basis.
    pub fn coefficients(&self, r_z: ArrayView1<f64>) -> Result<Array1<f64>> {
        if r_z.len() != self.sample_count() {
            return Err(Error::dim(format!(
                "sampled residual has {} entries, expected {}",
                r_z.len(),
                self.sample_count()
            )));
        }
        Ok(self.pinv.dot(&r_z))
    }

    /// Apply the projector to a full residual vector.
    pub fn project(&self, r: ArrayView1<f64>) -> Result<Array1<f64>> {
        if r.len() != self.full_dim() {
            return Err(Error::dim(format!(
                "residual has {} entries but the basis spans {}",
                r.len(),
                self.full_dim()
            )));
        }
        let r_z = gather(r, self.samples.indices());
        Ok(self.phi_r.dot(&self.pinv.dot(&r_z)))
    }
}

/// Build the gappy projector factors for `phi_r` (orthonormal columns) and
/// `samples`. Needs at least as many samples as basis columns and refuses a
/// sampled basis whose condition number exceeds [`MAX_SAMPLING_CONDITION`].
pub fn build_gappy_operator(
    phi_r: &Array2<f64>,
    samples: SampleIndexSet,
) -> Result<HyperReductionOperator> {
    let (m, n_r) = phi_r.dim();
    if samples.state_dim() != m {
        return Err(Error::dim(format!(
            "sample set is over {} entries but the basis has {m} rows",
            samples.state_dim()
        )));
    }
    if n_r == 0 || samples.len() < n_r {
        return Err(Error::invalid(format!(
            "needs at least as many samples as basis columns, got {} samples for {n_r} columns",
            samples.len()
        )));
    }
    let gram = phi_r.t().dot(phi_r);
    let mut deviation = 0.0f64;
    for i in 0..n_r {
        for j in 0..n_r {
            let target = if i == j { 1.0 } else { 0.0 };
            deviation = deviation.max((gram[[i, j]] - target).abs());
        }
    }
    if deviation > 1e-8 {
        return Err(Error::invalid(format!(
            "residual basis columns must be orthonormal (max Gram deviation {deviation:.3e})"
        )));
    }
    let sampled_basis = gather_rows(phi_r.view(), samples.indices());
    let svd = thin_svd_view(sampled_basis.view())?;
    let condition = svd.condition_number();
    if !condition.is_finite() || condition > MAX_SAMPLING_CONDITION {
        return Err(Error::numerical(format!(
            "sampled residual basis is ill-conditioned (condition number {condition:.3e}); \
             choose more or better samples"
        )));
    }
    let pinv = pseudo_inverse_view(sampled_basis.view())?;
    Ok(HyperReductionOperator {
        phi_r: phi_r.clone(),
        samples,
        sampled_basis,
        pinv,
    })
}

/// Residual basis via POD of solution snapshots. With implicit one-step
/// marching each converged flux is a scaled difference of two consecutive
/// solution deviations, so the span of the solution snapshots already carries
/// the residual directions the solvers see and no separate residual snapshot
/// collection is needed.
pub fn residual_basis_from_solution_snapshots(
    snapshots: &SnapshotMatrix,
    n_r: usize,
) -> Result<Array2<f64>> {
    Ok(compute_pod_basis(snapshots, n_r)?.phi)
}

/// Sample set together with the stencil closure needed to evaluate flux
/// entries at the samples; `closure` is sorted and contains every sample.
#[derive(Debug, Clone)]
pub struct HrClosure {
    samples: SampleIndexSet,
    closure: Vec<usize>,
    /// Position of each sample inside `closure`.
    sample_positions: Vec<usize>,
}

impl HrClosure {
    /// Close `samples` under the model's flux stencil.
    pub fn build(model: &dyn SemiDiscreteModel, samples: &SampleIndexSet) -> Result<Self> {
        if samples.state_dim() != model.dim() {
            return Err(Error::dim(format!(
                "sample set is over {} entries but the model has {}",
                samples.state_dim(),
                model.dim()
            )));
        }
        let closure = model.stencil_neighbors(samples.indices())?;
        let sample_positions = samples
            .indices()
            .iter()
            .map(|&g| {
                closure.binary_search(&g).map_err(|_| {
                    Error::invalid(format!("stencil closure dropped sample index {g}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(HrClosure {
            samples: samples.clone(),
            closure,
            sample_positions,
        })
    }

    pub fn samples(&self) -> &SampleIndexSet {
        &self.samples
    }

    /// Sorted global indices of the closure.
    pub fn indices(&self) -> &[usize] {
        &self.closure
    }

    pub fn len(&self) -> usize {
        self.closure.len()
    }

    pub fn is_empty(&self) -> bool {
        self.closure.is_empty()
    }

    /// Closure-local position of a global state index.
    pub fn position(&self, global: usize) -> Option<usize> {
        self.closure.binary_search(&global).ok()
    }

    pub(crate) fn sample_positions(&self) -> &[usize] {
        &self.sample_positions
    }
}

/// State values backed only by closure entries. Reading any other index
/// panics, which turns an accidental full-state dependence inside a sampled
/// evaluation into a loud failure instead of a silent wrong answer.
pub struct ClosureState<'a> {
    closure: &'a [usize],
    values: &'a [f64],
}

impl<'a> ClosureState<'a> {
    /// `values[k]` is the state entry at global index `closure[k]`.
    pub fn new(closure: &'a [usize], values: &'a [f64]) -> Self {
        assert_eq!(
            closure.len(),
            values.len(),
            "closure and value lengths differ"
        );
        ClosureState { closure, values }
    }
}

impl StateAccess for ClosureState<'_> {
    fn get(&self, i: usize) -> f64 {
        match self.closure.binary_search(&i) {
            Ok(k) => self.values[k],
            Err(_) => panic!("state index {i} read outside the sample closure"),
        }
    }
}

enum ClosureBlockMap {
    /// Closure rows of the block basis.
    Linear(Array2<f64>),
    /// Decoder subnet restricted to the block's closure rows.
    Manifold(Box<SubnetDecoder>),
}

struct ClosureBlock {
    map: ClosureBlockMap,
    /// Closure-local row span of this block.
    rows: (usize, usize),
    /// Latent span of this block.
    latent: (usize, usize),
}

/// Representation restricted to closure rows: evaluates u_ref + g(y) and the
/// tangent on the closure only, through decoder subnets for manifold blocks.
pub(crate) struct ClosureDecoder {
    blocks: Vec<ClosureBlock>,
    u_ref: Array1<f64>,
    latent_dim: usize,
}

impl std::fmt::Debug for ClosureDecoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClosureDecoder")
            .field("blocks", &self.blocks.len())
            .field("closure_rows", &self.u_ref.len())
            .field("latent_dim", &self.latent_dim)
            .finish()
    }
}

impl ClosureDecoder {
    pub(crate) fn build(rep: &Representation, closure: &HrClosure) -> Result<Self> {
        let ranges = rep.block_ranges();
        let globals = closure.indices();
        let full_ref = rep.u_ref();
        let u_ref = gather(full_ref.view(), globals);
        let mut blocks = Vec::with_capacity(ranges.len());
        for (c, &((r0, r1), (l0, l1))) in ranges.iter().enumerate() {
            let p0 = globals.partition_point(|&g| g < r0);
            let p1 = globals.partition_point(|&g| g < r1);
            if p0 == p1 {
                return Err(Error::invalid(format!(
                    "sample closure has no rows in component block {c}; add samples covering it"
                )));
            }
            let local_rows: Vec<usize> = globals[p0..p1].iter().map(|&g| g - r0).collect();
            let map = match rep {
                Representation::Linear { blocks: bs, .. } => {
                    ClosureBlockMap::Linear(gather_rows(bs[c].view(), &local_rows))
                }
                Representation::Manifold { blocks: bs } => ClosureBlockMap::Manifold(Box::new(
                    extract_subnet_scaled(&bs[c].decoder, &local_rows)?,
                )),
            };
            blocks.push(ClosureBlock {
                map,
                rows: (p0, p1),
                latent: (l0, l1),
            });
        }
        Ok(ClosureDecoder {
            blocks,
            u_ref,
            latent_dim: rep.latent_dim(),
        })
    }

    pub(crate) fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    /// Reconstruction u_ref + g(y) on the closure rows.
    pub(crate) fn decode(&self, y: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_latent(y)?;
        let mut out = self.u_ref.clone();
        for block in &self.blocks {
            let seg = y.slice(s![block.latent.0..block.latent.1]);
            let values = match &block.map {
                ClosureBlockMap::Linear(rows) => rows.dot(&seg),
                ClosureBlockMap::Manifold(subnet) => subnet_forward(subnet, seg)?,
            };
            out.slice_mut(s![block.rows.0..block.rows.1])
                .zip_mut_with(&values, |o, &v| *o += v);
        }
        Ok(out)
    }

    /// Tangent of the reconstruction on the closure rows, |closure| x latent.
    pub(crate) fn jacobian(&self, y: ArrayView1<f64>) -> Result<Array2<f64>> {
        self.check_latent(y)?;
        let mut out = Array2::zeros((self.u_ref.len(), self.latent_dim));
        for block in &self.blocks {
            let seg = y.slice(s![block.latent.0..block.latent.1]);
            let jac = match &block.map {
                ClosureBlockMap::Linear(rows) => rows.clone(),
                ClosureBlockMap::Manifold(subnet) => subnet_jacobian(subnet, seg)?,
            };
            out.slice_mut(s![
                block.rows.0..block.rows.1,
                block.latent.0..block.latent.1
            ])
            .assign(&jac);
        }
        Ok(out)
    }

    fn check_latent(&self, y: ArrayView1<f64>) -> Result<()> {
        if y.len() != self.latent_dim {
            return Err(Error::dim(format!(
                "latent vector has {} entries but the closure decoder expects {}",
                y.len(),
                self.latent_dim
            )));
        }
        Ok(())
    }
}

/// Everything a hyper-reduced solve needs at runtime: the gappy projector,
/// the stencil closure, the closure-restricted decoder, and for linear
/// representations a precomposed factor mapping sampled flux values straight
/// to the latent Galerkin velocity.
pub struct HrContext {
    pub operator: HyperReductionOperator,
    pub closure: HrClosure,
    decoder: ClosureDecoder,
    ls_galerkin_factor: Option<Array2<f64>>,
}

impl std::fmt::Debug for HrContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HrContext")
            .field("full_dim", &self.operator.full_dim())
            .field("basis_width", &self.operator.basis_width())
            .field("sample_count", &self.operator.sample_count())
            .field("closure_len", &self.closure.len())
            .field("latent_dim", &self.decoder.latent_dim())
            .finish()
    }
}

impl HrContext {
    pub fn new(
        problem: &RomProblem,
        operator: HyperReductionOperator,
        closure: HrClosure,
    ) -> Result<Self> {
        problem.validate()?;
        let m = problem.model.dim();
        if operator.full_dim() != m {
            return Err(Error::dim(format!(
                "gappy operator spans {} entries but the model has {m}",
                operator.full_dim()
            )));
        }
        if operator.samples != *closure.samples() {
            return Err(Error::invalid(
                "gappy operator and stencil closure were built from different sample sets",
            ));
        }
        let latent = problem.representation.latent_dim();
        if operator.basis_width() < latent {
            return Err(Error::invalid(format!(
                "residual basis width {} must be at least the latent dimension {latent}",
                operator.basis_width()
            )));
        }
        let decoder = ClosureDecoder::build(&problem.representation, &closure)?;
        let ls_galerkin_factor = match &problem.representation {
            Representation::Linear { .. } => {
                let origin = Array1::zeros(latent);
                let w = problem.representation.jacobian(origin.view())?;
                let w_z = gather_rows(w.view(), operator.samples.indices());
                let b = operator.pinv.dot(&w_z);
                let b_pinv = pseudo_inverse_view(b.view()).map_err(|e| match e {
                    Error::Numerical(msg) => Error::numerical(format!(
                        "hyper-reduced subspace operator is rank-deficient ({msg}); \
                         increase the sample count or basis width"
                    )),
                    other => other,
                })?;
                Some(b_pinv.dot(&operator.pinv))
            }
            Representation::Manifold { .. } => None,
        };
        Ok(HrContext {
            operator,
            closure,
            decoder,
            ls_galerkin_factor,
        })
    }

    /// Closure values of the reconstructed state at `y`.
    pub fn decode_closure(&self, y: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.decoder.decode(y)
    }

    /// Cheap consistency check against the problem a call pairs this context
    /// with; full compatibility is established at construction.
    fn check(&self, problem: &RomProblem) -> Result<()> {
        if self.operator.full_dim() != problem.model.dim()
            || self.decoder.latent_dim() != problem.representation.latent_dim()
        {
            return Err(Error::dim(
                "hyper-reduction context does not match the problem dimensions",
            ));
        }
        let linear = matches!(problem.representation, Representation::Linear { .. });
        if linear != self.ls_galerkin_factor.is_some() {
            return Err(Error::invalid(
                "hyper-reduction context was built for a different representation kind",
            ));
        }
        Ok(())
    }
}

/// Flux entries at `samples`, reading the state only through `state`.
pub(crate) fn sampled_flux(
    model: &dyn SemiDiscreteModel,
    state: &dyn StateAccess,
    samples: &[usize],
) -> Array1<f64> {
    let mut out = vec![0.0; samples.len()];
    model.flux_rows(state, samples, &mut out);
    Array1::from_vec(out)
}

/// Sample rows of J_f(u) W for a `w_closure` given on closure rows: contracts
/// each sparse Jacobian row against the matching closure rows of W.
pub(crate) fn sampled_flux_jacobian_times(
    model: &dyn SemiDiscreteModel,
    state: &dyn StateAccess,
    closure: &HrClosure,
    w_closure: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    let samples = closure.samples().indices();
    let rows = model.flux_jacobian_rows(state, samples);
    let mut out = Array2::zeros((samples.len(), w_closure.ncols()));
    for (k, row) in rows.iter().enumerate() {
        for &(col, val) in row {
            let local = closure.position(col).ok_or_else(|| {
                Error::numerical(format!(
                    "flux Jacobian column {col} falls outside the sample closure"
                ))
            })?;
            out.row_mut(k)
                .zip_mut_with(&w_closure.row(local), |o, &wv| *o += val * wv);
        }
    }
    Ok(out)
}

/// Sampled state values and sampled flux of the reconstruction at `y`,
/// evaluated through the closure only.
fn sampled_level(
    model: &dyn SemiDiscreteModel,
    ctx: &HrContext,
    y: ArrayView1<f64>,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let u_h = ctx.decoder.decode(y)?;
    let u_z = gather(u_h.view(), ctx.closure.sample_positions());
    let state = ClosureState::new(
        ctx.closure.indices(),
        u_h.as_slice().expect("contiguous state"),
    );
    let f_z = sampled_flux(model, &state, ctx.closure.samples().indices());
    Ok((u_z, f_z))
}

fn hr_tangent_error(e: Error) -> Error {
    match e {
        Error::Numerical(msg) => Error::numerical(format!(
            "hyper-reduced manifold tangent is rank-deficient at the current latent state ({msg})"
        )),
        other => other,
    }
}

/// Hyper-reduced Galerkin velocity on a linear subspace: the sampled flux is
/// lifted through the gappy projector and pulled back to latent coordinates
/// by a factor precomposed at context build time.
pub fn ls_galerkin_hr_rhs(
    problem: &RomProblem,
    ctx: &HrContext,
    y: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    if !matches!(problem.representation, Representation::Linear { .. }) {
        return Err(Error::invalid(
            "linear-subspace velocity needs a linear representation",
        ));
    }
    ctx.check(problem)?;
    galerkin_hr_velocity(problem, ctx, y)
}

/// Hyper-reduced Galerkin velocity on a decoder manifold: least-squares
/// solve of (pinv Z^T J_g) dy/dt = pinv Z^T f with every factor evaluated on
/// the sampled rows through the decoder subnet.
pub fn nm_galerkin_hr_rhs(
    problem: &RomProblem,
    ctx: &HrContext,
    y: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    if !matches!(problem.representation, Representation::Manifold { .. }) {
        return Err(Error::invalid(
            "manifold velocity needs a manifold representation",
        ));
    }
    ctx.check(problem)?;
    galerkin_hr_velocity(problem, ctx, y)
}

fn galerkin_hr_velocity(
    problem: &RomProblem,
    ctx: &HrContext,
    y: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    let (_, f_z) = sampled_level(problem.model, ctx, y)?;
    match &ctx.ls_galerkin_factor {
        Some(factor) => Ok(factor.dot(&f_z)),
        None => {
            let w_h = ctx.decoder.jacobian(y)?;
            let w_z = gather_rows(w_h.view(), ctx.closure.sample_positions());
            let b = ctx.operator.pinv.dot(&w_z);
            let q = ctx.operator.pinv.dot(&f_z);
            least_squares_view(b.view(), q.view()).map_err(hr_tangent_error)
        }
    }
}

/// Velocity Jacobian with the decoder curvature dropped: exact for linear
/// blocks, and for manifold blocks accurate enough to drive Newton on the
/// residual, which stays exact.
fn galerkin_hr_velocity_jacobian(
    problem: &RomProblem,
    ctx: &HrContext,
    y: ArrayView1<f64>,
) -> Result<Array2<f64>> {
    let u_h = ctx.decoder.decode(y)?;
    let state = ClosureState::new(
        ctx.closure.indices(),
        u_h.as_slice().expect("contiguous state"),
    );
    let w_h = ctx.decoder.jacobian(y)?;
    let jw_z = sampled_flux_jacobian_times(problem.model, &state, &ctx.closure, w_h.view())?;
    match &ctx.ls_galerkin_factor {
        Some(factor) => Ok(factor.dot(&jw_z)),
        None => {
            let w_z = gather_rows(w_h.view(), ctx.closure.sample_positions());
            let b = ctx.operator.pinv.dot(&w_z);
            let p = ctx.operator.pinv.dot(&jw_z);
            least_squares_multi(b.view(), p.view()).map_err(hr_tangent_error)
        }
    }
}

/// One hyper-reduced LSPG step: minimizes half the squared norm of the gappy
/// coefficients of the scheme residual, with every quantity evaluated at the
/// sampled rows through the closure only. `history[j]` is the latent state
/// j+1 steps back (newest first) and must cover the scheme depth. Returns the
/// new latent state and the Gauss-Newton iteration count.
pub fn hr_lspg_step(
    problem: &RomProblem,
    ctx: &HrContext,
    history: &[Array1<f64>],
) -> Result<(Array1<f64>, usize)> {
    ctx.check(problem)?;
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
    let mut constant = Array1::zeros(ctx.operator.sample_count());
    for j in 1..=k {
        let (u_z, f_z) = sampled_level(problem.model, ctx, history[j - 1].view())?;
        let (aj, bj) = (scheme.alpha[j], scheme.beta[j]);
        constant.zip_mut_with(&u_z, |c, &v| *c += aj * v);
        if bj != 0.0 {
            constant.zip_mut_with(&f_z, |c, &fv| *c -= problem.grid.dt * bj * fv);
        }
    }
    hr_lspg_step_from_constant(problem, ctx, scheme, &constant, &history[0])
}

/// LSPG step with the history contribution already accumulated into the
/// sampled `constant`, so the sampled residual is
/// a0 u_Z(y) + constant - dt b0 f_Z(y).
fn hr_lspg_step_from_constant(
    problem: &RomProblem,
    ctx: &HrContext,
    scheme: &LinearMultistepScheme,
    constant: &Array1<f64>,
    y_prev: &Array1<f64>,
) -> Result<(Array1<f64>, usize)> {
    let (a0, b0) = (scheme.alpha[0], scheme.beta[0]);
    let dt = problem.grid.dt;
    let model = problem.model;
    let residual = |y: ArrayView1<f64>| -> Result<Array1<f64>> {
        let (u_z, f_z) = sampled_level(model, ctx, y)?;
        let mut r = constant.clone();
        r.zip_mut_with(&u_z, |ri, &ui| *ri += a0 * ui);
        r.zip_mut_with(&f_z, |ri, &fi| *ri -= dt * b0 * fi);
        Ok(ctx.operator.pinv.dot(&r))
    };
    let jacobian = |y: ArrayView1<f64>| -> Result<Array2<f64>> {
        let u_h = ctx.decoder.decode(y)?;
        let state = ClosureState::new(
            ctx.closure.indices(),
            u_h.as_slice().expect("contiguous state"),
        );
        let w_h = ctx.decoder.jacobian(y)?;
        let jw_z = sampled_flux_jacobian_times(model, &state, &ctx.closure, w_h.view())?;
        let mut a = gather_rows(w_h.view(), ctx.closure.sample_positions());
        a *= a0;
        a.zip_mut_with(&jw_z, |ai, &ji| *ai -= dt * b0 * ji);
        Ok(ctx.operator.pinv.dot(&a))
    };
    gauss_newton(
        residual,
        jacobian,
        y_prev.view(),
        GAUSS_NEWTON_TOL,
        GAUSS_NEWTON_MAX_ITER,
    )
}

/// March the hyper-reduced problem over its time grid. Per-step work scales
/// with the closure and sample sizes; full states are reconstructed from the
/// latent trajectory after the march, outside the reported wall time, which
/// covers the latent stepping loop only. Multistep schemes start with
/// backward Euler until enough history exists; a grid with zero steps yields
/// only the reconstructed initial state.
pub fn run_hr_rom(problem: &RomProblem, ctx: &HrContext) -> Result<RomTrajectory> {
    problem.validate()?;
    ctx.check(problem)?;
    let u0 = problem.model.initial_state();
    let y0 = problem.representation.encode(u0.view())?;
    let mut latents = vec![y0];
    let mut iterations: Vec<usize> = Vec::with_capacity(problem.grid.nt);
    let start = Instant::now();
    match problem.projection {
        Projection::Lspg => run_hr_lspg(problem, ctx, &mut latents, &mut iterations)?,
        Projection::Galerkin => run_hr_galerkin(problem, ctx, &mut latents, &mut iterations)?,
    }
    let wall_seconds = start.elapsed().as_secs_f64();
    let states = latents
        .iter()
        .map(|y| problem.representation.decode(y.view()))
        .collect::<Result<Vec<_>>>()?;
    Ok(RomTrajectory {
        latents,
        states,
        iterations,
        grid: problem.grid,
        wall_seconds,
    })
}

fn run_hr_lspg(
    problem: &RomProblem,
    ctx: &HrContext,
    latents: &mut Vec<Array1<f64>>,
    iterations: &mut Vec<usize>,
) -> Result<()> {
    let scheme = lmm_scheme(problem)?;
    let be = LinearMultistepScheme::backward_euler();
    let dt = problem.grid.dt;
    let mut level_cache: Vec<(Array1<f64>, Array1<f64>)> =
        vec![sampled_level(problem.model, ctx, latents[0].view())?];
    for n in 1..=problem.grid.nt {
        let effective = if n >= scheme.steps() { scheme } else { &be };
        let k = effective.steps();
        let mut constant = Array1::zeros(ctx.operator.sample_count());
        for j in 1..=k {
            let (u_z, f_z) = &level_cache[j - 1];
            let (aj, bj) = (effective.alpha[j], effective.beta[j]);
            constant.zip_mut_with(u_z, |c, &v| *c += aj * v);
            if bj != 0.0 {
                constant.zip_mut_with(f_z, |c, &fv| *c -= dt * bj * fv);
            }
        }
        let (y, iters) =
            hr_lspg_step_from_constant(problem, ctx, effective, &constant, latents.last().unwrap())
                .map_err(|e| at_step(n, e))?;
        level_cache.insert(0, sampled_level(problem.model, ctx, y.view())?);
        level_cache.truncate(scheme.steps().max(1));
        latents.push(y);
        iterations.push(iters);
    }
    Ok(())
}

fn run_hr_galerkin(
    problem: &RomProblem,
    ctx: &HrContext,
    latents: &mut Vec<Array1<f64>>,
    iterations: &mut Vec<usize>,
) -> Result<()> {
    let dt = problem.grid.dt;
    let f_dim = problem.representation.latent_dim();
    match &problem.integrator {
        Integrator::MidpointRk => {
            for n in 1..=problem.grid.nt {
                let y = latents.last().unwrap();
                let step = (|| -> Result<Array1<f64>> {
                    let k1 = galerkin_hr_velocity(problem, ctx, y.view())?;
                    let mut mid = y.clone();
                    mid.zip_mut_with(&k1, |mi, &k| *mi += 0.5 * dt * k);
                    let k2 = galerkin_hr_velocity(problem, ctx, mid.view())?;
                    let mut next = y.clone();
                    next.zip_mut_with(&k2, |ni, &k| *ni += dt * k);
                    Ok(next)
                })()
                .map_err(|e| at_step(n, e))?;
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
                vec![galerkin_hr_velocity(problem, ctx, latents[0].view())
                    .map_err(|e| at_step(0, e))?]
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
                    let residual = |y: &Array1<f64>| -> Result<Array1<f64>> {
                        let velocity = galerkin_hr_velocity(problem, ctx, y.view())?;
                        let mut r = constant.clone();
                        r.zip_mut_with(y, |ri, &yi| *ri += a0 * yi);
                        r.zip_mut_with(&velocity, |ri, &v| *ri -= dt * b0 * v);
                        Ok(r)
                    };
                    let solve_linearized =
                        |y: &Array1<f64>, r: &Array1<f64>| -> Result<Array1<f64>> {
                            let mut jac = galerkin_hr_velocity_jacobian(problem, ctx, y.view())?;
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
                    velocity_cache.insert(
                        0,
                        galerkin_hr_velocity(problem, ctx, y.view()).map_err(|e| at_step(n, e))?,
                    );
                    velocity_cache.truncate(scheme.steps().max(1));
                }
                latents.push(y);
                iterations.push(iters);
            }
        }
    }
    Ok(())
}
