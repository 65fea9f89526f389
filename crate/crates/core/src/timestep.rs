//! Linear multistep time integration with Newton solves for the implicit
//! steps, plus an explicit midpoint Runge-Kutta reference stepper.

use crate::burgers::{SemiDiscreteModel, StateVector};
use crate::linalg::StencilSolver;
use crate::{Error, Result};
use ndarray::Array1;
use std::time::Instant;

/// Newton tolerance on the step residual, relative to max(1, initial norm).
pub const NEWTON_TOL: f64 = 1e-10;
/// Newton iteration budget per implicit step.
pub const NEWTON_MAX_ITER: usize = 25;

/// k-step linear multistep scheme with residual
/// `r = sum_j alpha_j u^{n-j} - dt * sum_j beta_j f^{n-j}`, `j = 0..=k`.
/// `alpha_0 != 0` and `sum_j alpha_j = 0` (consistency).
#[derive(Clone, Debug)]
pub struct LinearMultistepScheme {
    pub name: &'static str,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl LinearMultistepScheme {
    pub fn new(name: &'static str, alpha: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() || alpha.len() != beta.len() {
            return Err(Error::invalid(
                "alpha and beta must be equal-length and nonempty",
            ));
        }
        if alpha[0] == 0.0 {
            return Err(Error::invalid("leading alpha coefficient must be nonzero"));
        }
        let s: f64 = alpha.iter().sum();
        if s.abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "alpha coefficients must sum to zero, got {s}"
            )));
        }
        Ok(LinearMultistepScheme { name, alpha, beta })
    }

    pub fn backward_euler() -> Self {
        LinearMultistepScheme {
            name: "backward-euler",
            alpha: vec![1.0, -1.0],
            beta: vec![1.0, 0.0],
        }
    }

    pub fn adams_moulton_2() -> Self {
        LinearMultistepScheme {
            name: "adams-moulton-2",
            alpha: vec![1.0, -1.0],
            beta: vec![0.5, 0.5],
        }
    }

    pub fn bdf2() -> Self {
        LinearMultistepScheme {
            name: "bdf2",
            alpha: vec![1.0, -4.0 / 3.0, 1.0 / 3.0],
            beta: vec![2.0 / 3.0, 0.0, 0.0],
        }
    }

    /// History depth k.
    pub fn steps(&self) -> usize {
        self.alpha.len() - 1
    }

    /// True when the new state's flux enters the residual (beta_0 != 0).
    pub fn is_implicit(&self) -> bool {
        self.beta[0] != 0.0
    }
}

/// Uniform time grid covering [0, T] in `nt` steps of `dt = T / nt`.
#[derive(Clone, Copy, Debug)]
pub struct TimeGrid {
    pub nt: usize,
    pub dt: f64,
    pub t_final: f64,
}

impl TimeGrid {
    pub fn new(t_final: f64, nt: usize) -> Result<Self> {
        if nt == 0 || !t_final.is_finite() || t_final <= 0.0 {
            return Err(Error::invalid(format!(
                "time grid needs nt >= 1 and T > 0, got nt={nt}, T={t_final}"
            )));
        }
        Ok(TimeGrid {
            nt,
            dt: t_final / nt as f64,
            t_final,
        })
    }
}

/// Full-order trajectory: states u^0 .. u^nt plus the grid, the parameter
/// value, and the wall-clock seconds spent inside the stepping loop.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub states: Vec<StateVector>,
    pub grid: TimeGrid,
    pub mu: f64,
    pub wall_seconds: f64,
}

/// Residual of a scheme given aligned histories `u[j] = u^{n-j}` and
/// `f[j] = f(u^{n-j})`.
pub fn lmm_residual(
    scheme: &LinearMultistepScheme,
    u: &[&StateVector],
    f: &[&StateVector],
    dt: f64,
) -> Result<StateVector> {
    let levels = scheme.alpha.len();
    if u.len() != levels || f.len() != levels {
        return Err(Error::dim(format!(
            "{} needs {levels} history levels, got {} states / {} fluxes",
            scheme.name,
            u.len(),
            f.len()
        )));
    }
    let m = u[0].len();
    let mut r = Array1::zeros(m);
    for j in 0..levels {
        if u[j].len() != m || f[j].len() != m {
            return Err(Error::dim("inconsistent history lengths"));
        }
        let (aj, bj) = (scheme.alpha[j], scheme.beta[j]);
        r.zip_mut_with(u[j], |ri, &uj| *ri += aj * uj);
        r.zip_mut_with(f[j], |ri, &fj| *ri -= dt * bj * fj);
    }
    Ok(r)
}

/// Backward Euler residual `u^n - u^{n-1} - dt f(u^n)`, written out directly.
pub fn be_residual(un: &StateVector, um1: &StateVector, fn_: &StateVector, dt: f64) -> StateVector {
    let mut r = un - um1;
    r.zip_mut_with(fn_, |ri, &f| *ri -= dt * f);
    r
}

/// Adams-Moulton 2 (trapezoid) residual
/// `u^n - u^{n-1} - dt/2 (f(u^n) + f(u^{n-1}))`.
pub fn am2_residual(
    un: &StateVector,
    um1: &StateVector,
    fn_: &StateVector,
    fm1: &StateVector,
    dt: f64,
) -> StateVector {
    let mut r = un - um1;
    r.zip_mut_with(fn_, |ri, &f| *ri -= 0.5 * dt * f);
    r.zip_mut_with(fm1, |ri, &f| *ri -= 0.5 * dt * f);
    r
}

/// BDF2 residual `u^n - 4/3 u^{n-1} + 1/3 u^{n-2} - 2/3 dt f(u^n)`.
pub fn bdf2_residual(
    un: &StateVector,
    um1: &StateVector,
    um2: &StateVector,
    fn_: &StateVector,
    dt: f64,
) -> StateVector {
    let mut r = un.clone();
    r.zip_mut_with(um1, |ri, &u| *ri -= 4.0 / 3.0 * u);
    r.zip_mut_with(um2, |ri, &u| *ri += 1.0 / 3.0 * u);
    r.zip_mut_with(fn_, |ri, &f| *ri -= 2.0 / 3.0 * dt * f);
    r
}

/// One explicit midpoint Runge-Kutta step.
pub fn midpoint_rk_step(model: &dyn SemiDiscreteModel, u: &StateVector, dt: f64) -> StateVector {
    let k1 = model.flux(u.as_slice().expect("contiguous state"));
    let mid = u + &(k1 * (0.5 * dt));
    let k2 = model.flux(mid.as_slice().expect("contiguous state"));
    u + &(k2 * dt)
}

/// Newton iteration on `r(u) = 0`. `solve_linearized(u, r)` returns the step
/// `delta` with `J(u) delta = r`; the update is `u -= delta`. Stops when
/// `||r|| <= tol * max(1, ||r_0||)`; zero iterations when the guess already
/// satisfies that. Returns the solution and the iteration count.
pub fn newton_step_solve(
    mut residual: impl FnMut(&StateVector) -> Result<StateVector>,
    mut solve_linearized: impl FnMut(&StateVector, &StateVector) -> Result<StateVector>,
    guess: &StateVector,
    tol: f64,
    max_iter: usize,
) -> Result<(StateVector, usize)> {
    let mut u = guess.clone();
    let mut r = residual(&u)?;
    let norm0 = r.dot(&r).sqrt();
    let target = tol * norm0.max(1.0);
    let mut iters = 0usize;
    loop {
        if r.dot(&r).sqrt() <= target {
            return Ok((u, iters));
        }
        if iters >= max_iter {
            return Err(Error::Convergence(format!(
                "Newton did not reach {target:.3e} within {max_iter} iterations (residual {:.3e})",
                r.dot(&r).sqrt()
            )));
        }
        let delta = solve_linearized(&u, &r)?;
        u.zip_mut_with(&delta, |ui, &d| *ui -= d);
        r = residual(&u)?;
        iters += 1;
    }
}

/// Time integrator selection for full-order runs.
#[derive(Clone, Debug)]
pub enum Integrator {
    Lmm(LinearMultistepScheme),
    MidpointRk,
}

impl Integrator {
    pub fn name(&self) -> &'static str {
        match self {
            Integrator::Lmm(s) => s.name,
            Integrator::MidpointRk => "midpoint-rk2",
        }
    }
}

/// March the full-order model over the grid. Multistep schemes start with
/// backward Euler until enough history exists. The reported wall time covers
/// the stepping loop only.
pub fn run_fom(model: &dyn SemiDiscreteModel, integrator: &Integrator, grid: &TimeGrid, mu: f64) -> Result<Trajectory> {
    let m = model.dim();
    let u0 = model.initial_state();
    if u0.len() != m {
        return Err(Error::dim("initial state length mismatch"));
    }
    let mut states = Vec::with_capacity(grid.nt + 1);
    states.push(u0);
    let start = Instant::now();
    match integrator {
        Integrator::MidpointRk => {
            for _ in 0..grid.nt {
                let next = midpoint_rk_step(model, states.last().unwrap(), grid.dt);
                states.push(next);
            }
        }
        Integrator::Lmm(scheme) => {
            let be = LinearMultistepScheme::backward_euler();
            // Cache fluxes of already-computed states, newest first next step.
            let mut flux_cache: Vec<StateVector> = vec![model.flux(states[0].as_slice().unwrap())];
            for n in 1..=grid.nt {
                let effective = if n >= scheme.steps() { scheme } else { &be };
                let next = implicit_lmm_step(model, effective, &states, &flux_cache, grid.dt)?;
                flux_cache.insert(0, model.flux(next.as_slice().unwrap()));
                flux_cache.truncate(scheme.steps().max(1));
                states.push(next);
            }
        }
    }
    let wall_seconds = start.elapsed().as_secs_f64();
    Ok(Trajectory {
        states,
        grid: *grid,
        mu,
        wall_seconds,
    })
}

/// Solve one implicit (or evaluate one explicit) LMM step given the state
/// history and the cached fluxes of those states (newest first).
fn implicit_lmm_step(
    model: &dyn SemiDiscreteModel,
    scheme: &LinearMultistepScheme,
    states: &[StateVector],
    flux_cache: &[StateVector],
    dt: f64,
) -> Result<StateVector> {
    let m = model.dim();
    let k = scheme.steps();
    // Constant part: sum_{j>=1} alpha_j u^{n-j} - dt sum_{j>=1} beta_j f^{n-j}.
    let mut constant: StateVector = Array1::zeros(m);
    for j in 1..=k {
        let state = &states[states.len() - j];
        constant.zip_mut_with(state, |c, &u| *c += scheme.alpha[j] * u);
        if scheme.beta[j] != 0.0 {
            let f = &flux_cache[j - 1];
            constant.zip_mut_with(f, |c, &fv| *c -= dt * scheme.beta[j] * fv);
        }
    }
    let (a0, b0) = (scheme.alpha[0], scheme.beta[0]);
    if b0 == 0.0 {
        // Explicit in the new state: u^n = -constant / alpha_0.
        return Ok(constant.mapv(|c| -c / a0));
    }
    let plan = model.newton_plan();
    let residual = |u: &StateVector| -> Result<StateVector> {
        let f = model.flux(u.as_slice().unwrap());
        let mut r = constant.clone();
        r.zip_mut_with(u, |ri, &ui| *ri += a0 * ui);
        r.zip_mut_with(&f, |ri, &fi| *ri -= dt * b0 * fi);
        Ok(r)
    };
    let solve_linearized = |u: &StateVector, r: &StateVector| -> Result<StateVector> {
        let jac = model.flux_jacobian(u.as_slice().unwrap());
        let system = jac.scaled_plus_identity(-dt * b0, a0)?;
        let solver = StencilSolver::factor(&system, plan.kl, plan.ku, plan.perm.as_deref())?;
        Ok(Array1::from_vec(solver.solve(r.as_slice().unwrap())?))
    };
    let guess = states.last().unwrap();
    let (u, _) = newton_step_solve(residual, solve_linearized, guess, NEWTON_TOL, NEWTON_MAX_ITER)?;
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::burgers::{Mesh1D, Model1D};
    use crate::testutil::LinearTestModel;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn scheme_validation_rejects_bad_coefficients() {
        assert!(LinearMultistepScheme::new("z", vec![0.0, 1.0], vec![1.0, 0.0]).is_err());
        assert!(LinearMultistepScheme::new("s", vec![1.0, -0.5], vec![1.0, 0.0]).is_err());
        assert!(LinearMultistepScheme::new("l", vec![1.0], vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn residual_hand_examples() {
        let un = array![2.0];
        let um1 = array![1.0];
        let fn_ = array![3.0];
        let fm1 = array![1.0];
        let r_be = be_residual(&un, &um1, &fn_, 0.1);
        assert_abs_diff_eq!(r_be[0], 0.7, epsilon = 1e-15);
        let r_am2 = am2_residual(&un, &um1, &fn_, &fm1, 0.1);
        assert_abs_diff_eq!(r_am2[0], 0.8, epsilon = 1e-15);
        let um2 = array![0.5];
        let r_bdf2 = bdf2_residual(&un, &um1, &um2, &fn_, 0.1);
        assert_abs_diff_eq!(r_bdf2[0], 2.0 - 4.0 / 3.0 + 0.5 / 3.0 - 0.2, epsilon = 1e-15);
    }

    #[test]
    fn named_residuals_match_coefficient_tables() {
        let un = array![1.3, -0.4];
        let um1 = array![0.9, 0.2];
        let um2 = array![0.4, 0.1];
        let fn_ = array![-0.6, 1.1];
        let fm1 = array![0.3, -0.2];
        let zero = array![0.0, 0.0];
        let dt = 0.07;
        let be = lmm_residual(
            &LinearMultistepScheme::backward_euler(),
            &[&un, &um1],
            &[&fn_, &fm1],
            dt,
        )
        .unwrap();
        for (a, b) in be.iter().zip(be_residual(&un, &um1, &fn_, dt).iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
        let am2 = lmm_residual(
            &LinearMultistepScheme::adams_moulton_2(),
            &[&un, &um1],
            &[&fn_, &fm1],
            dt,
        )
        .unwrap();
        for (a, b) in am2.iter().zip(am2_residual(&un, &um1, &fn_, &fm1, dt).iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
        let bdf2 = lmm_residual(
            &LinearMultistepScheme::bdf2(),
            &[&un, &um1, &um2],
            &[&fn_, &fm1, &zero],
            dt,
        )
        .unwrap();
        for (a, b) in bdf2.iter().zip(bdf2_residual(&un, &um1, &um2, &fn_, dt).iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn newton_solves_quadratic() {
        let guess = array![5.0];
        let (x, iters) = newton_step_solve(
            |u| Ok(array![u[0] * u[0] - 4.0]),
            |u, r| Ok(array![r[0] / (2.0 * u[0])]),
            &guess,
            1e-12,
            25,
        )
        .unwrap();
        assert_abs_diff_eq!(x[0], 2.0, epsilon = 1e-10);
        assert!(iters > 0 && iters < 10);
    }

    #[test]
    fn newton_zero_iterations_at_solution() {
        let guess = array![2.0];
        let (_, iters) = newton_step_solve(
            |u| Ok(array![u[0] * u[0] - 4.0]),
            |u, r| Ok(array![r[0] / (2.0 * u[0])]),
            &guess,
            1e-10,
            25,
        )
        .unwrap();
        assert_eq!(iters, 0);
    }

    #[test]
    fn newton_reports_nonconvergence() {
        // Force stagnation with a bogus linear solve that returns zero steps.
        let guess = array![5.0];
        let err = newton_step_solve(
            |u| Ok(array![u[0] * u[0] - 4.0]),
            |_, r| Ok(r * 0.0),
            &guess,
            1e-12,
            5,
        );
        assert!(matches!(err, Err(Error::Convergence(_))));
    }

    /// Backward Euler on u' = a u has the exact update u/(1 - a dt).
    #[test]
    fn backward_euler_matches_scalar_closed_form() {
        let a = -2.0;
        let model = LinearTestModel::diagonal(vec![a]);
        let grid = TimeGrid::new(0.5, 5).unwrap();
        let traj = run_fom(&model, &Integrator::Lmm(LinearMultistepScheme::backward_euler()), &grid, 0.0).unwrap();
        let mut expect = model.initial[0];
        for _ in 0..grid.nt {
            expect /= 1.0 - a * grid.dt;
        }
        assert_abs_diff_eq!(traj.states[grid.nt][0], expect, epsilon = 1e-9);
    }

    #[test]
    fn midpoint_step_matches_taylor_expansion() {
        let model = LinearTestModel::diagonal(vec![-1.0]);
        let u = array![1.0];
        let dt = 0.1;
        let next = midpoint_rk_step(&model, &u, dt);
        assert_abs_diff_eq!(next[0], 1.0 - dt + dt * dt / 2.0, epsilon = 1e-15);
    }

    fn convergence_ratio(scheme: LinearMultistepScheme, nt: usize) -> f64 {
        // u' = A u with skew + decay mix, compare against matrix exponential
        // computed by a very fine midpoint reference.
        let model = LinearTestModel::new(array![[-1.0, 0.7], [-0.7, -0.5]], array![1.0, -0.5]);
        let t_final = 1.0;
        let reference = {
            let grid = TimeGrid::new(t_final, 40_000).unwrap();
            run_fom(&model, &Integrator::MidpointRk, &grid, 0.0)
                .unwrap()
                .states[40_000]
                .clone()
        };
        let err = |nt: usize| -> f64 {
            let grid = TimeGrid::new(t_final, nt).unwrap();
            let traj = run_fom(&model, &Integrator::Lmm(scheme.clone()), &grid, 0.0).unwrap();
            let d = &traj.states[nt] - &reference;
            d.dot(&d).sqrt()
        };
        err(nt) / err(2 * nt)
    }

    #[test]
    fn backward_euler_is_first_order() {
        let ratio = convergence_ratio(LinearMultistepScheme::backward_euler(), 64);
        assert!((1.8..=2.2).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn am2_is_second_order() {
        let ratio = convergence_ratio(LinearMultistepScheme::adams_moulton_2(), 64);
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn bdf2_is_second_order() {
        let ratio = convergence_ratio(LinearMultistepScheme::bdf2(), 64);
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn burgers_be_halving_dt_halves_error() {
        let model = Model1D::new(Mesh1D::new(65).unwrap(), 1.0).unwrap();
        let t_final = 0.25;
        let reference = {
            let grid = TimeGrid::new(t_final, 4096).unwrap();
            run_fom(&model, &Integrator::Lmm(LinearMultistepScheme::backward_euler()), &grid, 1.0)
                .unwrap()
                .states[4096]
                .clone()
        };
        let err = |nt: usize| -> f64 {
            let grid = TimeGrid::new(t_final, nt).unwrap();
            let traj =
                run_fom(&model, &Integrator::Lmm(LinearMultistepScheme::backward_euler()), &grid, 1.0)
                    .unwrap();
            let d = &traj.states[nt] - &reference;
            d.dot(&d).sqrt()
        };
        let ratio = err(64) / err(128);
        assert!((1.8..=2.2).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn trajectory_has_nt_plus_one_states() {
        let model = Model1D::new(Mesh1D::new(33).unwrap(), 0.9).unwrap();
        let grid = TimeGrid::new(0.1, 10).unwrap();
        let traj = run_fom(&model, &Integrator::Lmm(LinearMultistepScheme::bdf2()), &grid, 0.9).unwrap();
        assert_eq!(traj.states.len(), 11);
        assert!(traj.wall_seconds >= 0.0);
        for s in &traj.states {
            assert!(s.iter().all(|v| v.is_finite()));
        }
    }
}
