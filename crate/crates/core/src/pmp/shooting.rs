use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use super::adjoint::{adjoint_rhs, AdjointPath};
use super::multipliers::{Multipliers, Regime};
use crate::error::{OcError, Result};
use crate::ode::{integrate, DenseSolution, OdeOptions};
use crate::piecewise::{norm, Grid, PiecewiseC1Fn, PiecewiseFn};
use crate::problem::{BolzaProblem, Process};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShootingOptions {
    pub max_iterations: usize,
    /// Step of the central-difference Jacobian.
    pub fd_step: f64,
    /// Convergence threshold on `‖residual‖_∞`.
    pub tol: f64,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            fd_step: 1e-7,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ShootingResult {
    pub process: Process,
    pub multipliers: Multipliers,
    pub adjoint: AdjointPath,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
}

/// Maximizer of `ζ ↦ H_B(t, x, ζ, p, 1)`: the model's closed form when it has
/// one, otherwise a Newton ascent with a finite-difference Hessian that must
/// be negative definite.
pub fn recover_control(problem: &BolzaProblem, t: f64, x: &[f64], p: &[f64], pi: &[f64]) -> Result<Vec<f64>> {
    if let Some(u) = problem.model.hamiltonian_argmax(t, x, 1.0, p, pi) {
        return Ok(problem.control_set.project(&u));
    }
    let c = problem.dims().control;
    let ham = problem.hamiltonian(1.0);
    let grad = |z: &[f64]| DVector::from_vec(ham.control_gradient(t, x, z, p, pi));
    let mut u = problem.control_set.center(c);
    for iter in 0..40 {
        let g = grad(&u);
        if g.amax() <= 1e-13 * (1.0 + norm(&u)) {
            return Ok(u);
        }
        let h = 1e-5 * (1.0 + norm(&u));
        let mut hess = DMatrix::zeros(c, c);
        for j in 0..c {
            let (mut up, mut dn) = (u.clone(), u.clone());
            up[j] += h;
            dn[j] -= h;
            hess.set_column(j, &((grad(&up) - grad(&dn)) / (2.0 * h)));
        }
        let hess = 0.5 * (&hess + hess.transpose());
        let top = SymmetricEigen::new(hess.clone()).eigenvalues.max();
        if !(top < 0.0) {
            return Err(OcError::Unsupported(format!(
                "Hamiltonian is not strictly concave in the control at t = {t} (largest Hessian eigenvalue {top:e})"
            )));
        }
        let step = hess.lu().solve(&(-g)).ok_or_else(|| OcError::Unsupported("singular control Hessian".into()))?;
        let next = problem.control_set.project((DVector::from_column_slice(&u) + &step).as_slice());
        let moved = norm(&crate::piecewise::sub(&next, &u));
        u = next;
        if moved <= 1e-14 * (1.0 + norm(&u)) && iter > 0 {
            return Ok(u);
        }
    }
    Ok(u)
}

struct Trajectory {
    sol: Arc<DenseSolution>,
}

/// Integrates the state–adjoint system from `(ξ₀, p0)` with the control
/// recovered pointwise.
fn flow_state_adjoint(problem: &BolzaProblem, pi: &[f64], p0: &[f64]) -> Result<Trajectory> {
    let n = problem.dims().state;
    let prob = Arc::new(problem.clone());
    let pi_v = Arc::new(pi.to_vec());
    let failure: Arc<Mutex<Option<OcError>>> = Arc::new(Mutex::new(None));
    let rhs = {
        let (prob, pi_v, failure) = (prob.clone(), pi_v.clone(), failure.clone());
        Arc::new(move |t: f64, z: &[f64]| {
            let (x, p) = z.split_at(n);
            match recover_control(&prob, t, x, p, &pi_v) {
                Ok(u) => {
                    let mut out = prob.model.vector_field(t, x, &u, &pi_v);
                    out.extend(adjoint_rhs(&prob, 1.0, t, x, &u, p, &pi_v));
                    out
                }
                Err(e) => {
                    failure.lock().expect("failure slot").get_or_insert(e);
                    vec![f64::NAN; 2 * n]
                }
            }
        })
    };
    let mut z0 = problem.initial_state(pi);
    z0.extend_from_slice(p0);
    let mut opts: OdeOptions = problem.ode;
    opts.guard = problem.state_guard;
    let out = integrate(rhs, 0.0, problem.horizon, z0, &opts);
    if let Some(e) = failure.lock().expect("failure slot").take() {
        return Err(e);
    }
    Ok(Trajectory { sol: Arc::new(out?) })
}

/// `(h(x(T)), p(T) − D₁g⁰ − Σ μ D₁h)`.
fn shooting_residual(problem: &BolzaProblem, pi: &[f64], z: &[f64]) -> Result<(Vec<f64>, Trajectory)> {
    let d = problem.dims();
    let (p0, mu) = z.split_at(d.state);
    let traj = flow_state_adjoint(problem, pi, p0)?;
    let end = traj.sol.final_state();
    let (x_t, p_t) = end.split_at(d.state);
    let m = &problem.model;
    let mut r: Vec<f64> = (0..d.equalities).map(|b| m.equality(b, x_t, pi)).collect();
    let mut tc = p_t.to_vec();
    for (o, g) in tc.iter_mut().zip(m.terminal_partials(0, x_t, pi).dx) {
        *o -= g;
    }
    for (b, mb) in mu.iter().enumerate() {
        for (o, g) in tc.iter_mut().zip(m.equality_partials(b, x_t, pi).dx) {
            *o -= mb * g;
        }
    }
    r.extend(tc);
    Ok((r, traj))
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Indirect shooting on `(p(0), μ)` with `λ₀ = 1`, assuming the inequality
/// constraints inactive and the control interior.
pub fn shooting_solve(
    problem: &BolzaProblem,
    pi: &[f64],
    guess: (&[f64], &[f64]),
    opts: &ShootingOptions,
) -> Result<ShootingResult> {
    let d = problem.dims();
    if guess.0.len() != d.state {
        return Err(OcError::dim("initial adjoint guess", d.state, guess.0.len()));
    }
    if guess.1.len() != d.equalities {
        return Err(OcError::dim("equality multiplier guess", d.equalities, guess.1.len()));
    }
    if pi.len() != d.param {
        return Err(OcError::dim("parameter", d.param, pi.len()));
    }
    let mut z: Vec<f64> = guess.0.iter().chain(guess.1).copied().collect();
    let (mut r, mut traj) = shooting_residual(problem, pi, &z)?;
    let mut history = vec![inf_norm(&r)];
    let mut iterations = 0;
    let newton = |z: &[f64], r: &[f64]| -> Result<(DVector<f64>, Option<(Vec<f64>, Vec<f64>, Trajectory)>)> {
        let k = z.len();
        let mut jac = DMatrix::zeros(r.len(), k);
        for j in 0..k {
            let h = opts.fd_step * (1.0 + z[j].abs());
            let (mut zp, mut zm) = (z.to_vec(), z.to_vec());
            zp[j] += h;
            zm[j] -= h;
            let rp = shooting_residual(problem, pi, &zp)?.0;
            let rm = shooting_residual(problem, pi, &zm)?.0;
            for i in 0..r.len() {
                jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let step = jac
            .svd(true, true)
            .solve(&(-DVector::from_column_slice(r)), 1e-12)
            .map_err(|e| OcError::Unsupported(format!("shooting step: {e}")))?;
        let base = norm(r).powi(2);
        let mut alpha = 1.0;
        for _ in 0..30 {
            let trial: Vec<f64> = z.iter().zip(step.iter()).map(|(a, b)| a + alpha * b).collect();
            if let Ok((rt, tt)) = shooting_residual(problem, pi, &trial) {
                if norm(&rt).powi(2) <= (1.0 - 1e-4 * alpha) * base {
                    return Ok((step, Some((trial, rt, tt))));
                }
            }
            alpha *= 0.5;
        }
        Ok((step, None))
    };
    while inf_norm(&r) > opts.tol {
        if iterations >= opts.max_iterations {
            return Err(OcError::NoConvergence { iterations, history });
        }
        iterations += 1;
        match newton(&z, &r)? {
            (_, Some((zt, rt, tt))) => {
                z = zt;
                r = rt;
                traj = tt;
                history.push(inf_norm(&r));
            }
            (step, None) => {
                // No descent: accept if already at the round-off floor.
                if norm(&r) <= 1e-8 && step.norm() <= 1e-10 * (1.0 + norm(&z)) {
                    break;
                }
                return Err(OcError::NoConvergence { iterations, history });
            }
        }
    }
    // One more step once within tolerance, kept only if it helps, so that
    // values differentiated by finite differences are not limited by `tol`.
    if iterations > 0 && inf_norm(&r) > 0.0 {
        if let (_, Some((zt, rt, tt))) = newton(&z, &r)? {
            if inf_norm(&rt) < inf_norm(&r) {
                z = zt;
                r = rt;
                traj = tt;
                history.push(inf_norm(&r));
            }
        }
    }
    let x_t: Vec<f64> = traj.sol.final_state()[..d.state].to_vec();
    for a in 1..=d.inequalities {
        let g = problem.model.terminal(a, &x_t, pi);
        if g < -problem.feasibility_tol {
            return Err(OcError::Unsupported(format!(
                "inequality constraint {a} violated at the shooting solution (g = {g:e}); active inequalities are not supported"
            )));
        }
    }
    build_result(problem, pi, &z, traj, iterations, history)
}

fn build_result(problem: &BolzaProblem, pi: &[f64], z: &[f64], traj: Trajectory, iterations: usize, history: Vec<f64>) -> Result<ShootingResult> {
    let d = problem.dims();
    let n = d.state;
    let grid = Grid::trivial(problem.horizon)?;
    let sol = traj.sol;
    let part = |range: std::ops::Range<usize>, deriv: bool| -> crate::piecewise::SegmentFn {
        let sol = sol.clone();
        Arc::new(move |t| {
            let v = if deriv { sol.eval_derivative(t) } else { sol.eval(t) };
            v[range.clone()].to_vec()
        })
    };
    let x = PiecewiseC1Fn::new(grid.clone(), n, vec![part(0..n, false)], vec![part(0..n, true)])?;
    let p = PiecewiseC1Fn::new(grid.clone(), n, vec![part(n..2 * n, false)], vec![part(n..2 * n, true)])?;
    let u = {
        let (prob, pi_v, sol) = (Arc::new(problem.clone()), pi.to_vec(), sol.clone());
        let c = d.control;
        Arc::new(move |t: f64| {
            let z = sol.eval(t);
            recover_control(&prob, t, &z[..n], &z[n..], &pi_v).unwrap_or_else(|_| vec![f64::NAN; c])
        }) as crate::piecewise::SegmentFn
    };
    let u = PiecewiseFn::new(grid, d.control, vec![u])?;
    let mut lambda = vec![1.0];
    lambda.extend(std::iter::repeat_n(0.0, d.inequalities));
    Ok(ShootingResult {
        process: Process::new(x, u, pi.to_vec()),
        multipliers: Multipliers {
            lambda,
            mu: z[n..].to_vec(),
            normalized: true,
            regime: Regime::Normalized,
            degenerate: false,
        },
        adjoint: AdjointPath { p, lambda0: 1.0 },
        iterations,
        residual_history: history,
    })
}
