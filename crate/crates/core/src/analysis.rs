//! Post-run analysis: relative-error metrics between trajectories,
//! Lipschitz-constant estimation for a semi-discrete flux, an a-posteriori
//! per-step error bound for the hyper-reduced solvers under a linear
//! multistep scheme, and a leading-order flop model for the LSPG family.

use crate::burgers::{SemiDiscreteModel, StateVector};
use crate::hyper::HyperReductionOperator;
use crate::linalg::CsrMatrix;
use crate::rom::{lmm_scheme, Representation, RomProblem, RomTrajectory};
use crate::timestep::{LinearMultistepScheme, Trajectory};
use crate::{Error, Result};
use ndarray::Array1;

/// Power-iteration tolerance for operator norms used by the bound check.
pub const OPERATOR_NORM_TOL: f64 = 1e-8;
/// Power-iteration budget for operator norms.
pub const OPERATOR_NORM_MAX_ITER: usize = 1000;

fn l2(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

fn flux_of(model: &dyn SemiDiscreteModel, u: &StateVector) -> StateVector {
    model.flux(u.as_slice().expect("contiguous state"))
}

/// Relative-error summary of an approximate trajectory against a reference.
/// `per_step[n-1]` is the step-n ratio; `max_relative` is their maximum.
/// The projection fields are filled by the caller when a basis or trained
/// representation is available to measure against.
#[derive(Clone, Debug)]
pub struct ErrorReport {
    /// Largest per-step relative error over steps n >= 1.
    pub max_relative: f64,
    /// ||approx^n - ref^n||_2 / ||ref^n||_2 for n = 1..=nt.
    pub per_step: Vec<f64>,
    /// Out-of-subspace content of the reference through a linear basis.
    pub linear_projection: Option<f64>,
    /// Reconstruction error of the reference through a trained manifold.
    pub nonlinear_projection: Option<f64>,
}

/// Maximum relative state error of `approx` against `reference`, step by
/// step. The initial states (index 0) are excluded from the ratio; a pair of
/// single-state trajectories therefore reports zero. The metric is invariant
/// under joint positive scaling of both trajectories.
pub fn max_relative_error(
    approx: &[StateVector],
    reference: &[StateVector],
) -> Result<ErrorReport> {
    if approx.len() != reference.len() {
        return Err(Error::dim(format!(
            "trajectories have {} and {} states; they must match",
            approx.len(),
            reference.len()
        )));
    }
    if approx.is_empty() {
        return Err(Error::invalid(
            "trajectories must contain at least the initial state",
        ));
    }
    let mut per_step = Vec::with_capacity(approx.len() - 1);
    for (n, (a, r)) in approx.iter().zip(reference).enumerate().skip(1) {
        if a.len() != r.len() {
            return Err(Error::dim(format!(
                "step {n}: states have {} and {} entries",
                a.len(),
                r.len()
            )));
        }
        let rn = l2(r);
        if rn == 0.0 {
            return Err(Error::invalid(format!(
                "reference state at step {n} has zero norm"
            )));
        }
        per_step.push(l2(&(a - r)) / rn);
    }
    let max_relative = per_step.iter().cloned().fold(0.0_f64, f64::max);
    Ok(ErrorReport {
        max_relative,
        per_step,
        linear_projection: None,
        nonlinear_projection: None,
    })
}

/// Relative reconstruction error of a trajectory through a representation:
/// sqrt(sum_n ||u^n - dec(enc(u^n))||^2) / sqrt(sum_n ||u^n||^2) over states
/// 1..=nt, the same aggregation as the linear projection error. On a linear
/// representation the round trip is the orthogonal projection, so the two
/// metrics agree.
pub fn representation_projection_error(
    traj: &Trajectory,
    rep: &Representation,
) -> Result<f64> {
    let m = rep.full_dim();
    if traj.states.iter().any(|s| s.len() != m) {
        return Err(Error::dim("projection error: inconsistent dimensions"));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for state in traj.states.iter().skip(1) {
        let rebuilt = rep.decode(rep.encode(state.view())?.view())?;
        let residual = state - &rebuilt;
        num += residual.dot(&residual);
        den += state.dot(state);
    }
    if den <= 0.0 {
        return Err(Error::numerical(
            "projection error denominator is zero (all states zero)",
        ));
    }
    Ok((num / den).sqrt())
}

/// Spectral norm of a sparse matrix by power iteration on `A^T A`, using
/// only row products. Mirrors the dense estimator in `linalg`.
fn sparse_spectral_norm(a: &CsrMatrix, tol: f64, max_iter: usize) -> f64 {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 || a.nnz() == 0 {
        return 0.0;
    }
    let mut v = Array1::from_shape_fn(n, |i| 1.0 + (i as f64 + 1.0).sqrt().fract());
    let norm = l2(&v);
    v.mapv_inplace(|x| x / norm);
    let mut sigma = 0.0_f64;
    for _ in 0..max_iter {
        let av = a.matvec(v.view()).expect("square Jacobian by construction");
        let mut w = Array1::zeros(n);
        for (i, j, val) in a.iter_entries() {
            w[j] += val * av[i];
        }
        let wn = l2(&w);
        if wn == 0.0 {
            return 0.0;
        }
        let new_sigma = wn.sqrt();
        let done = (new_sigma - sigma).abs() <= tol * new_sigma.max(1e-300);
        sigma = new_sigma;
        v = w / wn;
        if done {
            break;
        }
    }
    sigma
}

/// Lipschitz-constant estimate for the model flux from observed states: the
/// largest pairwise difference quotient ||f(a) - f(b)|| / ||a - b||, raised
/// to the largest flux-Jacobian spectral norm at any of the states. Both
/// ingredients observe the flux only at the supplied states, so the result
/// is a lower estimate of the true constant; adding samples never lowers it.
/// For the bound check to be meaningful, pass the paired full-order and
/// reduced states whose errors the bound propagates.
pub fn estimate_lipschitz(model: &dyn SemiDiscreteModel, samples: &[StateVector]) -> f64 {
    let fluxes: Vec<StateVector> = samples.iter().map(|s| flux_of(model, s)).collect();
    let mut estimate = 0.0_f64;
    for i in 0..samples.len() {
        for j in (i + 1)..samples.len() {
            let d = &samples[i] - &samples[j];
            let dn = l2(&d);
            if dn > 0.0 {
                let df = &fluxes[i] - &fluxes[j];
                estimate = estimate.max(l2(&df) / dn);
            }
        }
    }
    for s in samples {
        let jac = model.flux_jacobian(s.as_slice().expect("contiguous state"));
        estimate = estimate.max(sparse_spectral_norm(
            &jac,
            OPERATOR_NORM_TOL,
            OPERATOR_NORM_MAX_ITER,
        ));
    }
    estimate
}

/// Which hyper-reduced manifold solver produced the trajectory under test.
/// The check itself reads only the realized states; for the LSPG variant the
/// projected-residual term is the minimum its solver achieved at each step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundVariant {
    NmGalerkinHr,
    NmLspgHr,
}

impl BoundVariant {
    pub fn name(&self) -> &'static str {
        match self {
            BoundVariant::NmGalerkinHr => "nm-galerkin-hr",
            BoundVariant::NmLspgHr => "nm-lspg-hr",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "nm-galerkin-hr" => Ok(BoundVariant::NmGalerkinHr),
            "nm-lspg-hr" => Ok(BoundVariant::NmLspgHr),
            other => Err(Error::invalid(format!(
                "unknown bound variant '{other}'; expected nm-galerkin-hr or nm-lspg-hr"
            ))),
        }
    }
}

/// Interpretation note carried in every bound report: the contraction ratios
/// are evaluated per step from the realized trajectories rather than as
/// uniform-in-time constants, so each step is checked against the sharpest
/// inequality its own data admits.
pub const PER_STEP_RATIO_NOTE: &str = "gamma_1 and gamma_2 are realized per step from the \
     computed trajectories; admissibility and the bound are checked with each step's own values \
     rather than uniform-in-time constants";

/// One step of the bound check. `holds` is present only at admissible steps;
/// at inadmissible steps the right-hand side is not defined and is reported
/// as NaN.
#[derive(Clone, Debug)]
pub struct BoundStepCheck {
    /// Step index n >= 1.
    pub step: usize,
    /// Actual error ||u^n - u_tilde^n||_2.
    pub lhs: f64,
    /// Bound value assembled from the projected residual, the contraction
    /// ratios, and the prior-step errors; NaN when inadmissible.
    pub rhs: f64,
    /// ||P e^n|| / (||P|| ||e^n||) for the state error e^n, clamped to 1.
    pub gamma_1: f64,
    /// Same ratio for the flux difference f(u^n) - f(u_tilde^n).
    pub gamma_2: f64,
    /// dt * gamma_2 |beta_0| L < gamma_1 |alpha_0| at this step.
    pub admissible: bool,
    /// lhs <= rhs, evaluated only at admissible steps.
    pub holds: Option<bool>,
}

/// Per-step evaluation of the a-posteriori error bound for a hyper-reduced
/// run, together with the operator norm and Lipschitz constant it used.
#[derive(Clone, Debug)]
pub struct BoundCheckReport {
    pub variant: BoundVariant,
    /// See [`PER_STEP_RATIO_NOTE`].
    pub interpretation: &'static str,
    /// ||P||_2 of the oblique residual projector, by power iteration.
    pub projector_norm: f64,
    /// Lipschitz constant supplied by the caller.
    pub lipschitz: f64,
    pub dt: f64,
    pub steps: Vec<BoundStepCheck>,
}

impl BoundCheckReport {
    pub fn admissible_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.admissible).count()
    }

    /// Steps where the inequality was checked and failed.
    pub fn violations(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| s.holds == Some(false))
            .count()
    }

    pub fn all_admissible_steps_hold(&self) -> bool {
        self.violations() == 0
    }
}

/// ||P||_2 for the oblique projector P = Phi_r pinv Z^T by power iteration
/// on P^T P. The start vector has support on the sample rows, where P reads.
fn projector_spectral_norm(op: &HyperReductionOperator) -> Result<f64> {
    let m = op.full_dim();
    let mut x = Array1::zeros(m);
    for &s in op.samples.indices() {
        x[s] = 1.0;
    }
    let norm = l2(&x);
    x.mapv_inplace(|v| v / norm);
    let mut sigma = 0.0_f64;
    for _ in 0..OPERATOR_NORM_MAX_ITER {
        let px = op.project(x.view())?;
        let c = op.phi_r.t().dot(&px);
        let d = op.pinv.t().dot(&c);
        let mut y = Array1::zeros(m);
        for (pos, &s) in op.samples.indices().iter().enumerate() {
            y[s] = d[pos];
        }
        let yn = l2(&y);
        if yn == 0.0 {
            return Ok(0.0);
        }
        let new_sigma = yn.sqrt();
        let done = (new_sigma - sigma).abs() <= OPERATOR_NORM_TOL * new_sigma.max(1e-300);
        sigma = new_sigma;
        x = y / yn;
        if done {
            break;
        }
    }
    Ok(sigma)
}

/// Ratio ||P v|| / (||P|| ||v||), the realized contraction of the projector
/// on `v`. A zero vector contributes nothing to the bound, so it reports the
/// neutral value 1; roundoff above 1 is clamped.
fn contraction_ratio(
    op: &HyperReductionOperator,
    projector_norm: f64,
    v: &Array1<f64>,
    vn: f64,
) -> Result<f64> {
    if vn == 0.0 {
        return Ok(1.0);
    }
    Ok((l2(&op.project(v.view())?) / (projector_norm * vn)).min(1.0))
}

/// Evaluate, step by step, the a-posteriori inequality bounding the distance
/// between the full-order states and a hyper-reduced trajectory marched by a
/// linear multistep scheme. At each step the projected scheme residual of
/// the reduced states and the realized contraction ratios gamma_1, gamma_2
/// combine with the prior-step errors into a bound on the current error;
/// the step is admissible when dt * gamma_2 |beta_0| L < gamma_1 |alpha_0|.
/// Inadmissible steps are reported, never raised. Multistep warmup follows
/// the solvers: backward Euler until enough history exists.
pub fn check_error_bound(
    variant: BoundVariant,
    problem: &RomProblem,
    operator: &HyperReductionOperator,
    fom: &Trajectory,
    rom: &RomTrajectory,
    lipschitz: f64,
) -> Result<BoundCheckReport> {
    problem.validate()?;
    let scheme = lmm_scheme(problem)?;
    let model = problem.model;
    let m = model.dim();
    if operator.full_dim() != m {
        return Err(Error::dim(format!(
            "residual projector spans {} state entries but the model has {m}",
            operator.full_dim()
        )));
    }
    let nt = problem.grid.nt;
    let dt = problem.grid.dt;
    for (label, states, grid) in [
        ("full-order", &fom.states, &fom.grid),
        ("reduced", &rom.states, &rom.grid),
    ] {
        if states.len() != nt + 1 {
            return Err(Error::invalid(format!(
                "{label} trajectory has {} states but the grid has {} steps",
                states.len(),
                nt
            )));
        }
        if grid.nt != nt || (grid.dt - dt).abs() > 1e-12 * dt.max(1.0) {
            return Err(Error::invalid(format!(
                "{label} trajectory was computed on a different time grid"
            )));
        }
        if states.iter().any(|s| s.len() != m) {
            return Err(Error::dim(format!(
                "{label} trajectory holds states of the wrong dimension"
            )));
        }
    }
    if !lipschitz.is_finite() || lipschitz < 0.0 {
        return Err(Error::invalid(
            "Lipschitz constant must be finite and nonnegative",
        ));
    }

    let projector_norm = projector_spectral_norm(operator)?;
    if projector_norm == 0.0 {
        return Err(Error::numerical("residual projector has zero norm"));
    }

    // Error vectors and reduced-state fluxes are reused across history terms.
    let diffs: Vec<Array1<f64>> = (0..=nt)
        .map(|i| &fom.states[i] - &rom.states[i])
        .collect();
    let err_norms: Vec<f64> = diffs.iter().map(l2).collect();
    let rom_flux: Vec<StateVector> = rom.states.iter().map(|s| flux_of(model, s)).collect();
    let be = LinearMultistepScheme::backward_euler();

    let mut steps = Vec::with_capacity(nt);
    for n in 1..=nt {
        let effective = if n >= scheme.steps() { scheme } else { &be };
        let k = effective.steps();

        let mut resid: Array1<f64> = &rom.states[n] * effective.alpha[0];
        resid.scaled_add(-dt * effective.beta[0], &rom_flux[n]);
        for j in 1..=k {
            resid.scaled_add(effective.alpha[j], &rom.states[n - j]);
            resid.scaled_add(-dt * effective.beta[j], &rom_flux[n - j]);
        }
        let projected_residual = l2(&operator.project(resid.view())?);

        let lhs = err_norms[n];
        let gamma_1 = contraction_ratio(operator, projector_norm, &diffs[n], lhs)?;
        let df = &flux_of(model, &fom.states[n]) - &rom_flux[n];
        let gamma_2 = contraction_ratio(operator, projector_norm, &df, l2(&df))?;

        let a0 = effective.alpha[0].abs();
        let b0 = effective.beta[0].abs();
        let admissible = gamma_2 * b0 * lipschitz * dt < gamma_1 * a0;
        let (rhs, holds) = if admissible {
            let denom = gamma_1 * a0 - gamma_2 * b0 * dt * lipschitz;
            let mut rhs = projected_residual / (projector_norm * denom);
            for j in 1..=k {
                let weight = effective.alpha[j].abs() + effective.beta[j].abs() * dt * lipschitz;
                rhs += weight / denom * err_norms[n - j];
            }
            // Tiny slack absorbs roundoff in the norm evaluations.
            (rhs, Some(lhs <= rhs * (1.0 + 1e-9) + 1e-12))
        } else {
            (f64::NAN, None)
        };

        steps.push(BoundStepCheck {
            step: n,
            lhs,
            rhs,
            gamma_1,
            gamma_2,
            admissible,
            holds,
        });
    }

    Ok(BoundCheckReport {
        variant,
        interpretation: PER_STEP_RATIO_NOTE,
        projector_norm,
        lipschitz,
        dt,
        steps,
    })
}

/// Solver family a flop estimate refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CostKind {
    NmLspg,
    NmLspgHr,
    LsLspg,
    LsLspgHr,
}

impl CostKind {
    pub fn name(&self) -> &'static str {
        match self {
            CostKind::NmLspg => "nm-lspg",
            CostKind::NmLspgHr => "nm-lspg-hr",
            CostKind::LsLspg => "ls-lspg",
            CostKind::LsLspgHr => "ls-lspg-hr",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "nm-lspg" => Ok(CostKind::NmLspg),
            "nm-lspg-hr" => Ok(CostKind::NmLspgHr),
            "ls-lspg" => Ok(CostKind::LsLspg),
            "ls-lspg-hr" => Ok(CostKind::LsLspgHr),
            other => Err(Error::invalid(format!(
                "unknown cost kind '{other}'; expected nm-lspg, nm-lspg-hr, ls-lspg, or ls-lspg-hr"
            ))),
        }
    }
}

/// Dimensions entering the per-step flop model: state dimension `m`, latent
/// dimension `f`, sample-closure size `z`, decoder hidden width `b`, hidden
/// width `delta_b` of an extracted subnet per output row, and the fraction
/// `beta` of decoder columns a subnet retains. Construct through [`new`]
/// so the positivity and `z <= m` invariants hold.
///
/// [`new`]: CostModelInput::new
#[derive(Clone, Copy, Debug)]
pub struct CostModelInput {
    pub m: usize,
    pub f: usize,
    pub z: usize,
    pub b: usize,
    pub delta_b: usize,
    pub beta: f64,
}

impl CostModelInput {
    pub fn new(m: usize, f: usize, z: usize, b: usize, delta_b: usize, beta: f64) -> Result<Self> {
        for (value, name) in [
            (m, "state dimension m"),
            (f, "latent dimension f"),
            (z, "closure size z"),
            (b, "hidden width b"),
            (delta_b, "subnet width delta_b"),
        ] {
            if value == 0 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        if z > m {
            return Err(Error::invalid(format!(
                "closure size z = {z} must not exceed the state dimension m = {m}"
            )));
        }
        if !beta.is_finite() || beta <= 0.0 || beta > 1.0 {
            return Err(Error::invalid(format!(
                "sampled-column fraction beta must lie in (0, 1], got {beta}"
            )));
        }
        Ok(CostModelInput {
            m,
            f,
            z,
            b,
            delta_b,
            beta,
        })
    }
}

/// Leading-order flops per time step with unit constants. The model predicts
/// orderings and scaling across solver kinds, never absolute seconds. The
/// manifold costs are dominated by decoder evaluation (full: m*b*f, sampled:
/// f*beta*M2 with M2 = b + (m-1)*delta_b) plus the sampled flux and normal
/// equations; the linear-subspace costs by the dense residual Jacobian
/// products. The result is monotone non-decreasing in m, f, z, and b.
pub fn flop_estimate(kind: CostKind, c: &CostModelInput) -> f64 {
    let (m, f, z, b, db) = (
        c.m as f64,
        c.f as f64,
        c.z as f64,
        c.b as f64,
        c.delta_b as f64,
    );
    match kind {
        CostKind::NmLspg => m * b * f,
        CostKind::NmLspgHr => {
            let m2 = b + (m - 1.0) * db;
            f * c.beta * m2 + z * b * f + f * z * z
        }
        CostKind::LsLspg => f * f * m,
        CostKind::LsLspgHr => f * f * z + f * z * z,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::burgers::{Mesh1D, Model1D};
    use crate::hyper::{
        build_gappy_operator, greedy_select_indices, residual_basis_from_solution_snapshots,
        HrClosure, HrContext, run_hr_rom,
    };
    use crate::linalg::{spectral_norm, thin_svd_view};
    use crate::pod::{assemble_snapshots, compute_pod_basis, linear_projection_error};
    use crate::rom::{Projection, Representation, RomProblem, RomTrajectory};
    use crate::testutil::LinearTestModel;
    use crate::timestep::{run_fom, Integrator, TimeGrid};
    use approx::assert_abs_diff_eq;
    use ndarray::{Array1, Array2};

    fn backward_euler() -> Integrator {
        Integrator::Lmm(LinearMultistepScheme::backward_euler())
    }

    fn wave_states(m: usize, count: usize) -> Vec<StateVector> {
        (0..count)
            .map(|n| {
                Array1::from_shape_fn(m, |i| {
                    1.0 + ((i + 1) as f64 * 0.37 + n as f64 * 0.61).sin() * 0.4
                })
            })
            .collect()
    }

    #[test]
    fn identical_trajectories_report_zero_error() {
        let states = wave_states(7, 5);
        let report = max_relative_error(&states, &states).unwrap();
        assert_eq!(report.max_relative, 0.0);
        assert_eq!(report.per_step.len(), 4);
        assert!(report.per_step.iter().all(|&e| e == 0.0));
        assert!(report.linear_projection.is_none());
        assert!(report.nonlinear_projection.is_none());

        // A single-state pair has no steps to compare.
        let single = wave_states(7, 1);
        let report = max_relative_error(&single, &single).unwrap();
        assert!(report.per_step.is_empty());
        assert_eq!(report.max_relative, 0.0);
    }

    #[test]
    fn uniform_inflation_reports_the_scalar_excess() {
        let reference = wave_states(9, 6);
        let approx: Vec<StateVector> = reference.iter().map(|s| s * 1.01).collect();
        let report = max_relative_error(&approx, &reference).unwrap();
        for &e in &report.per_step {
            assert_abs_diff_eq!(e, 0.01, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(report.max_relative, 0.01, epsilon = 1e-12);
    }

    #[test]
    fn report_maximum_matches_the_per_step_maximum() {
        let reference = wave_states(8, 7);
        let approx: Vec<StateVector> = reference
            .iter()
            .enumerate()
            .map(|(n, s)| s * (1.0 + 0.002 * ((n as f64) * 1.3).sin().abs()))
            .collect();
        let report = max_relative_error(&approx, &reference).unwrap();
        let max = report.per_step.iter().cloned().fold(0.0_f64, f64::max);
        assert_eq!(report.max_relative, max);
        assert!(report.max_relative > 0.0);
    }

    #[test]
    fn relative_error_is_invariant_under_joint_scaling() {
        let reference = wave_states(6, 5);
        let approx: Vec<StateVector> = reference
            .iter()
            .enumerate()
            .map(|(n, s)| s * (1.0 + 0.01 * (n as f64 + 1.0)))
            .collect();
        let base = max_relative_error(&approx, &reference).unwrap();
        for scale in [1e-3, 7.25, 4096.0] {
            let a: Vec<StateVector> = approx.iter().map(|s| s * scale).collect();
            let r: Vec<StateVector> = reference.iter().map(|s| s * scale).collect();
            let scaled = max_relative_error(&a, &r).unwrap();
            for (x, y) in scaled.per_step.iter().zip(&base.per_step) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
            assert_abs_diff_eq!(scaled.max_relative, base.max_relative, epsilon = 1e-12);
        }
    }

    #[test]
    fn degenerate_error_inputs_are_rejected() {
        let states = wave_states(5, 3);
        let err = max_relative_error(&states[..2], &states).unwrap_err();
        assert!(err.to_string().contains("must match"), "{err}");

        let mut zeroed = states.clone();
        zeroed[1] = Array1::zeros(5);
        let err = max_relative_error(&states, &zeroed).unwrap_err();
        assert!(err.to_string().contains("zero norm"), "{err}");

        let empty: Vec<StateVector> = Vec::new();
        assert!(max_relative_error(&empty, &empty).is_err());
    }

    #[test]
    fn lipschitz_matches_the_operator_norm_for_linear_flux() {
        let n = 6;
        let a = Array2::from_shape_fn((n, n), |(i, j)| {
            (((i + 2) * (j + 3)) as f64).sin() * 0.8 + if i == j { 1.5 } else { 0.0 }
        });
        let model = LinearTestModel::new(a.clone(), Array1::ones(n));
        let samples = wave_states(n, 4);
        let estimate = estimate_lipschitz(&model, &samples);

        // Independent oracle: plain power iteration on A^T A with a start
        // vector unrelated to the implementation's.
        let mut v = Array1::from_shape_fn(n, |i| ((i * i + 1) as f64).cos() + 2.0);
        let mut norm = 0.0_f64;
        for _ in 0..300 {
            let w = a.t().dot(&a.dot(&v));
            let wn = w.dot(&w).sqrt();
            v = w / wn;
            norm = wn.sqrt();
        }
        assert_abs_diff_eq!(estimate, norm, epsilon = 1e-6 * norm);
    }

    #[test]
    fn constant_flux_estimates_zero_lipschitz() {
        let model = LinearTestModel::new(Array2::zeros((4, 4)), Array1::ones(4));
        let samples = wave_states(4, 3);
        assert_eq!(estimate_lipschitz(&model, &samples), 0.0);
    }

    #[test]
    fn extra_samples_never_lower_the_estimate() {
        let mesh = Mesh1D::new(24).unwrap();
        let model = Model1D::new(mesh, 1.3).unwrap();
        let grid = TimeGrid::new(0.3, 8).unwrap();
        let traj = run_fom(&model, &backward_euler(), &grid, 1.3).unwrap();
        let few = estimate_lipschitz(&model, &traj.states[..3]);
        let more = estimate_lipschitz(&model, &traj.states[..7]);
        assert!(few > 0.0);
        assert!(more >= few);
        assert!(estimate_lipschitz(&model, &[]) == 0.0);
    }

    fn burgers_fixture(
        nx: usize,
        nt: usize,
        t_final: f64,
        f: usize,
        n_r: usize,
    ) -> (Model1D, Trajectory, Array2<f64>, StateVector, Array2<f64>) {
        let mesh = Mesh1D::new(nx).unwrap();
        let model = Model1D::new(mesh, 1.5).unwrap();
        let grid = TimeGrid::new(t_final, nt).unwrap();
        let fom = run_fom(&model, &backward_euler(), &grid, 1.5).unwrap();
        let u_ref = model.initial_state();
        let snapshots = assemble_snapshots(std::slice::from_ref(&fom), u_ref.view()).unwrap();
        let phi = compute_pod_basis(&snapshots, f).unwrap().phi;
        let phi_r = residual_basis_from_solution_snapshots(&snapshots, n_r).unwrap();
        (model, fom, phi, u_ref, phi_r)
    }

    #[test]
    fn projector_norm_matches_dense_operator_norm() {
        let (model, _fom, _phi, _u_ref, phi_r) = burgers_fixture(40, 12, 0.3, 4, 6);
        let m = model.dim();
        let samples = greedy_select_indices(phi_r.view(), 10).unwrap();
        let op = build_gappy_operator(&phi_r, samples).unwrap();

        let estimate = projector_spectral_norm(&op).unwrap();

        // Dense oracle: materialize P column by column and take its norm.
        let b = op.phi_r.dot(&op.pinv);
        let mut dense = Array2::<f64>::zeros((m, m));
        for (pos, &s) in op.samples.indices().iter().enumerate() {
            dense.column_mut(s).assign(&b.column(pos));
        }
        let dense_norm = spectral_norm(dense.view(), 1e-10, 5000);
        assert_abs_diff_eq!(estimate, dense_norm, epsilon = 1e-6 * dense_norm);

        // The sampling rows are orthonormal coordinate selections and the
        // basis columns orthonormal, so ||P|| is the inverse smallest
        // singular value of the sampled basis.
        let svd = thin_svd_view(op.sampled_basis.view()).unwrap();
        let sigma_min = *svd.sigma.last().unwrap();
        assert_abs_diff_eq!(estimate, 1.0 / sigma_min, epsilon = 1e-6 / sigma_min);
    }

    #[test]
    fn representation_round_trip_matches_linear_projection_error() {
        let (_model, fom, phi, u_ref, _phi_r) = burgers_fixture(36, 10, 0.3, 4, 6);
        let linear = linear_projection_error(&fom, phi.view(), u_ref.view()).unwrap();
        let rep = Representation::manifold_from_basis(&phi, u_ref.view()).unwrap();
        let round_trip = representation_projection_error(&fom, &rep).unwrap();
        assert_abs_diff_eq!(round_trip, linear, epsilon = 1e-10 * linear.max(1e-30));
        assert!(linear > 0.0);
    }

    #[test]
    fn identical_trajectories_satisfy_the_bound() {
        let (model, fom, phi, u_ref, phi_r) = burgers_fixture(36, 10, 0.05, 4, 6);
        let samples = greedy_select_indices(phi_r.view(), 9).unwrap();
        let op = build_gappy_operator(&phi_r, samples).unwrap();
        let rep = Representation::manifold_from_basis(&phi, u_ref.view()).unwrap();
        let problem = RomProblem::new(
            &model,
            backward_euler(),
            fom.grid,
            rep,
            Projection::Lspg,
        )
        .unwrap();
        let rom = RomTrajectory {
            latents: vec![Array1::zeros(4); fom.states.len()],
            states: fom.states.clone(),
            iterations: vec![0; fom.grid.nt],
            grid: fom.grid,
            wall_seconds: 0.0,
        };
        let lip = estimate_lipschitz(&model, &fom.states);
        let report =
            check_error_bound(BoundVariant::NmGalerkinHr, &problem, &op, &fom, &rom, lip).unwrap();
        assert_eq!(report.steps.len(), 10);
        for step in &report.steps {
            assert_eq!(step.lhs, 0.0);
            // Zero error vectors report the neutral ratio.
            assert_eq!(step.gamma_1, 1.0);
            assert!(step.admissible, "step {} inadmissible", step.step);
            assert_eq!(step.holds, Some(true));
            assert!(step.rhs >= 0.0);
        }
        assert!(report.all_admissible_steps_hold());
        assert_eq!(report.violations(), 0);
        assert_eq!(report.variant.name(), "nm-galerkin-hr");
    }

    #[test]
    fn backward_euler_bound_holds_on_a_coarse_run() {
        let (model, fom, phi, u_ref, phi_r) = burgers_fixture(48, 50, 0.1, 6, 10);
        let samples = greedy_select_indices(phi_r.view(), 16).unwrap();
        let op = build_gappy_operator(&phi_r, samples.clone()).unwrap();
        let closure = HrClosure::build(&model, &samples).unwrap();
        let rep = Representation::manifold_from_basis(&phi, u_ref.view()).unwrap();
        let problem = RomProblem::new(
            &model,
            backward_euler(),
            fom.grid,
            rep,
            Projection::Lspg,
        )
        .unwrap();
        let ctx = HrContext::new(&problem, op.clone(), closure).unwrap();
        let rom = run_hr_rom(&problem, &ctx).unwrap();

        // The estimate must dominate the realized flux ratios of the matched
        // state pairs, so both trajectories feed it.
        let mut states = fom.states.clone();
        states.extend(rom.states.iter().cloned());
        let lip = estimate_lipschitz(&model, &states);
        assert!(lip > 0.0);

        let report =
            check_error_bound(BoundVariant::NmLspgHr, &problem, &op, &fom, &rom, lip).unwrap();
        assert_eq!(report.steps.len(), 50);
        assert!(report.projector_norm >= 1.0);
        assert_eq!(report.interpretation, PER_STEP_RATIO_NOTE);

        let admissible = report.admissible_steps();
        assert!(admissible >= 40, "only {admissible} of 50 steps admissible");
        assert!(
            report.all_admissible_steps_hold(),
            "bound violated at {} steps",
            report.violations()
        );
        for step in &report.steps {
            assert!(step.gamma_1 > 0.0 && step.gamma_1 <= 1.0);
            assert!(step.gamma_2 > 0.0 && step.gamma_2 <= 1.0);
            if step.admissible {
                assert!(step.rhs.is_finite() && step.rhs >= 0.0);
            } else {
                assert!(step.rhs.is_nan());
                assert_eq!(step.holds, None);
            }
        }
    }

    #[test]
    fn bound_rejects_mismatched_inputs() {
        let (model, fom, phi, u_ref, phi_r) = burgers_fixture(36, 10, 0.05, 4, 6);
        let samples = greedy_select_indices(phi_r.view(), 9).unwrap();
        let op = build_gappy_operator(&phi_r, samples).unwrap();
        let rep = Representation::manifold_from_basis(&phi, u_ref.view()).unwrap();
        let rom = RomTrajectory {
            latents: vec![Array1::zeros(4); fom.states.len()],
            states: fom.states.clone(),
            iterations: vec![0; fom.grid.nt],
            grid: fom.grid,
            wall_seconds: 0.0,
        };

        // Explicit integrators have no step residual to project.
        let problem = RomProblem::new(
            &model,
            Integrator::MidpointRk,
            fom.grid,
            rep.clone(),
            Projection::Galerkin,
        )
        .unwrap();
        let err = check_error_bound(BoundVariant::NmLspgHr, &problem, &op, &fom, &rom, 1.0)
            .unwrap_err();
        assert!(err.to_string().contains("linear multistep"), "{err}");

        // A trajectory from another grid cannot be compared step by step.
        let problem = RomProblem::new(
            &model,
            backward_euler(),
            fom.grid,
            rep,
            Projection::Lspg,
        )
        .unwrap();
        let mut other = fom.clone();
        other.grid.dt *= 2.0;
        other.grid.t_final *= 2.0;
        let err = check_error_bound(BoundVariant::NmLspgHr, &problem, &op, &other, &rom, 1.0)
            .unwrap_err();
        assert!(err.to_string().contains("different time grid"), "{err}");

        let err = check_error_bound(BoundVariant::NmLspgHr, &problem, &op, &fom, &rom, f64::NAN)
            .unwrap_err();
        assert!(err.to_string().contains("Lipschitz"), "{err}");
    }

    #[test]
    fn bound_variant_names_round_trip() {
        for variant in [BoundVariant::NmGalerkinHr, BoundVariant::NmLspgHr] {
            assert_eq!(BoundVariant::from_name(variant.name()).unwrap(), variant);
        }
        assert!(BoundVariant::from_name("nm-lspg").is_err());
    }

    #[test]
    fn flop_estimates_match_their_closed_forms() {
        let c = CostModelInput::new(1024, 5, 31, 32, 16, 31.0 / 1024.0).unwrap();
        let m2 = 32.0 + 1023.0 * 16.0;
        assert_abs_diff_eq!(
            flop_estimate(CostKind::NmLspg, &c),
            1024.0 * 32.0 * 5.0,
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(
            flop_estimate(CostKind::NmLspgHr, &c),
            5.0 * (31.0 / 1024.0) * m2 + 31.0 * 32.0 * 5.0 + 5.0 * 31.0 * 31.0,
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(
            flop_estimate(CostKind::LsLspg, &c),
            25.0 * 1024.0,
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(
            flop_estimate(CostKind::LsLspgHr, &c),
            25.0 * 31.0 + 5.0 * 31.0 * 31.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn small_closures_make_hyper_reduction_cheaper() {
        // z^2 < m with beta = z/m: sampling wins in both families.
        let c = CostModelInput::new(1024, 5, 31, 32, 16, 31.0 / 1024.0).unwrap();
        assert!(flop_estimate(CostKind::NmLspgHr, &c) < flop_estimate(CostKind::NmLspg, &c));
        assert!(flop_estimate(CostKind::LsLspgHr, &c) < flop_estimate(CostKind::LsLspg, &c));
    }

    #[test]
    fn full_sampling_collapses_decoder_and_flux_terms() {
        // With unit widths and every row sampled, the subnet evaluation and
        // the sampled flux each cost exactly the full decoder and flux; only
        // the quadratic normal-equation algebra remains on top.
        let m = 50;
        let c = CostModelInput::new(m, 1, m, 1, 1, 1.0).unwrap();
        let full = flop_estimate(CostKind::NmLspg, &c);
        let sampled = flop_estimate(CostKind::NmLspgHr, &c);
        assert_abs_diff_eq!(full, m as f64, epsilon = 1e-12);
        assert_abs_diff_eq!(
            sampled,
            2.0 * full + (m as f64) * (m as f64),
            epsilon = 1e-9
        );
    }

    #[test]
    fn estimates_grow_with_each_dimension() {
        let base = CostModelInput::new(100, 4, 9, 8, 3, 0.2).unwrap();
        let kinds = [
            CostKind::NmLspg,
            CostKind::NmLspgHr,
            CostKind::LsLspg,
            CostKind::LsLspgHr,
        ];
        let bumped = [
            CostModelInput::new(200, 4, 9, 8, 3, 0.2).unwrap(),
            CostModelInput::new(100, 8, 9, 8, 3, 0.2).unwrap(),
            CostModelInput::new(100, 4, 18, 8, 3, 0.2).unwrap(),
            CostModelInput::new(100, 4, 9, 16, 3, 0.2).unwrap(),
        ];
        for kind in kinds {
            let reference = flop_estimate(kind, &base);
            for c in &bumped {
                assert!(
                    flop_estimate(kind, c) >= reference,
                    "{} shrank under a larger input",
                    kind.name()
                );
            }
        }
    }

    #[test]
    fn cost_gap_widens_across_problem_sizes() {
        let mut last_gap = f64::NEG_INFINITY;
        for m in [1_000, 10_000, 100_000, 1_000_000] {
            let c = CostModelInput::new(m, 5, 60, 30, 15, 0.05).unwrap();
            let gap = flop_estimate(CostKind::NmLspg, &c) - flop_estimate(CostKind::NmLspgHr, &c);
            assert!(gap > 0.0);
            assert!(gap > last_gap, "gap stopped growing at m = {m}");
            last_gap = gap;
        }
    }

    #[test]
    fn invalid_cost_inputs_are_rejected() {
        assert!(CostModelInput::new(0, 4, 9, 8, 3, 0.2).is_err());
        let err = CostModelInput::new(100, 0, 9, 8, 3, 0.2).unwrap_err();
        assert!(err.to_string().contains("latent dimension f"), "{err}");
        assert!(CostModelInput::new(100, 4, 101, 8, 3, 0.2).is_err());
        assert!(CostModelInput::new(100, 4, 9, 8, 3, 0.0).is_err());
        assert!(CostModelInput::new(100, 4, 9, 8, 3, 1.5).is_err());
        assert!(CostModelInput::new(100, 4, 9, 8, 3, f64::NAN).is_err());
        for name in ["nm-lspg", "nm-lspg-hr", "ls-lspg", "ls-lspg-hr"] {
            assert_eq!(CostKind::from_name(name).unwrap().name(), name);
        }
        assert!(CostKind::from_name("nm-galerkin").is_err());
    }
}
