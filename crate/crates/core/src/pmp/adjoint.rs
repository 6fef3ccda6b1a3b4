use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{OcError, Result};
use crate::flow::solve_on_grid;
use crate::piecewise::{norm, PiecewiseC1Fn};
use crate::problem::{check_process_dims, BolzaProblem, Process};

/// Adjoint function `p` (stored as a column vector) together with the `λ₀`
/// it was integrated for.
#[derive(Debug, Clone)]
pub struct AdjointPath {
    pub p: PiecewiseC1Fn,
    pub lambda0: f64,
}

impl AdjointPath {
    pub fn terminal(&self) -> Vec<f64> {
        self.p.value_at(self.p.horizon())
    }

    pub fn initial(&self) -> Vec<f64> {
        self.p.value_at(0.0)
    }

    pub fn value_at(&self, t: f64) -> Vec<f64> {
        self.p.value_at(t)
    }

    /// `(t, p(t))` on every segment of the adjoint grid.
    pub fn samples(&self, per_segment: usize) -> Vec<(f64, Vec<f64>)> {
        self.p.grid().sample_times(per_segment).into_iter().map(|t| (t, self.p.value_at(t))).collect()
    }
}

/// `−D₂H_B = −λ₀ ∇ₓf⁰ − D₂fᵀ p` at one point.
pub(crate) fn adjoint_rhs(problem: &BolzaProblem, lambda0: f64, t: f64, x: &[f64], u: &[f64], p: &[f64], pi: &[f64]) -> Vec<f64> {
    let m = &problem.model;
    let f = m.vector_field_partials(t, x, u, pi);
    let mut out = (f.dx.transpose() * DVector::from_column_slice(p)).as_slice().to_vec();
    if lambda0 != 0.0 {
        let r = m.running_reward_partials(t, x, u, pi);
        for (o, g) in out.iter_mut().zip(r.dx) {
            *o += lambda0 * g;
        }
    }
    out.iter_mut().for_each(|v| *v = -*v);
    out
}

/// Integrates `d̲p = −λ₀ ∇ₓf⁰ − D₂fᵀ p` backward from `p(T) = pT` along
/// `proc`, restarting at every breakpoint of the process.
pub fn adjoint_backward(problem: &BolzaProblem, proc: &Process, lambda0: f64, p_terminal: &[f64]) -> Result<AdjointPath> {
    check_process_dims(problem, proc)?;
    let n = problem.dims().state;
    if p_terminal.len() != n {
        return Err(OcError::dim("terminal adjoint", n, p_terminal.len()));
    }
    if !(lambda0 >= 0.0) {
        return Err(OcError::domain("λ₀ must be nonnegative"));
    }
    let (grid, segs) = proc.segments()?;
    let prob = Arc::new(problem.clone());
    let pi = Arc::new(proc.pi.clone());
    let mut opts = problem.ode;
    opts.guard = None;
    let p = solve_on_grid(
        &grid,
        n,
        p_terminal.to_vec(),
        true,
        |i| {
            let (xs, _, us) = segs[i].clone();
            let (prob, pi) = (prob.clone(), pi.clone());
            Arc::new(move |t, p| adjoint_rhs(&prob, lambda0, t, &xs(t), &us(t), p, &pi))
        },
        &opts,
    )?;
    Ok(AdjointPath { p, lambda0 })
}

/// Second-order difference quotient of a segment evaluator, one-sided near
/// the segment ends.
pub(crate) fn segment_derivative(f: &dyn Fn(f64) -> Vec<f64>, t: f64, a: f64, b: f64, h: f64) -> Vec<f64> {
    let combo = |ws: [(f64, f64); 3]| -> Vec<f64> {
        let vals: Vec<Vec<f64>> = ws.iter().map(|(s, _)| f(*s)).collect();
        (0..vals[0].len())
            .map(|k| ws.iter().zip(&vals).map(|((_, w), v)| w * v[k]).sum::<f64>() / (2.0 * h))
            .collect()
    };
    if t - h < a {
        combo([(t, -3.0), (t + h, 4.0), (t + 2.0 * h, -1.0)])
    } else if t + h > b {
        combo([(t, 3.0), (t - h, -4.0), (t - 2.0 * h, 1.0)])
    } else {
        combo([(t - h, -1.0), (t, 0.0), (t + h, 1.0)])
    }
}

/// Collocation samples per segment used by the adjoint-equation residual.
pub const COLLOCATION_SAMPLES: usize = 16;

/// Largest `‖d̲p(t) + D₂H_B‖` over collocation points, with `d̲p` taken by
/// central differences of the stored adjoint inside each segment; returns the
/// residual and where it occurs.
pub fn adjoint_residual(problem: &BolzaProblem, proc: &Process, adjoint: &AdjointPath) -> Result<(f64, f64)> {
    let grid = crate::piecewise::merge_grids(&proc.segments()?.0, adjoint.p.grid())?;
    let x = proc.x.on_grid(&grid)?;
    let u = proc.u.on_grid(&grid)?;
    let p = adjoint.p.on_grid(&grid)?;
    let mut worst = (0.0, 0.0);
    for i in 0..grid.num_segments() {
        let (a, b) = grid.segment_bounds(i);
        let h = 1e-4 * (b - a);
        let (xs, us, ps) = (x.value_segment(i), u.segment(i), p.value_segment(i));
        for j in 0..=COLLOCATION_SAMPLES {
            let t = a + (b - a) * j as f64 / COLLOCATION_SAMPLES as f64;
            let dp = segment_derivative(ps.as_ref(), t, a, b, h);
            let rhs = adjoint_rhs(problem, adjoint.lambda0, t, &xs(t), &us(t), &ps(t), &proc.pi);
            let r = norm(&crate::piecewise::sub(&dp, &rhs));
            if !(r <= worst.0) {
                worst = (r, t);
            }
        }
    }
    Ok(worst)
}
