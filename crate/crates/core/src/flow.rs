//! Controlled trajectories, needle-like control variations, the linearized
//! equation with its resolvent, and the first-order terminal map.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{OcError, Result};
use crate::ode::{integrate, DenseSolution, OdeOptions, Rhs};
use crate::piecewise::{merge_grids, norm, sub, Grid, PiecewiseC1Fn, PiecewiseFn, SegmentFn, BREAKPOINT_TOL};
use crate::problem::{check_process_dims, BolzaProblem, ControlSet, Process};
use crate::quadrature::integrate_vec;

/// Integrates `y' = rhs_i(t, y)` segment by segment over `grid`, restarting
/// the integrator at every breakpoint. With `backward`, `start` is the value at
/// `T` and integration runs from `T` to `0`.
pub(crate) fn solve_on_grid(
    grid: &Grid,
    dim: usize,
    start: Vec<f64>,
    backward: bool,
    rhs_for: impl Fn(usize) -> Rhs,
    opts: &OdeOptions,
) -> Result<PiecewiseC1Fn> {
    let k = grid.num_segments();
    let mut sols: Vec<Option<DenseSolution>> = vec![None; k];
    let mut y = start;
    let order: Vec<usize> = if backward { (0..k).rev().collect() } else { (0..k).collect() };
    for i in order {
        let (a, b) = grid.segment_bounds(i);
        let (t0, t1) = if backward { (b, a) } else { (a, b) };
        let sol = integrate(rhs_for(i), t0, t1, y, opts)?;
        y = sol.final_state().to_vec();
        sols[i] = Some(sol);
    }
    let mut values: Vec<SegmentFn> = Vec::with_capacity(k);
    let mut derivs: Vec<SegmentFn> = Vec::with_capacity(k);
    for sol in sols.into_iter().map(|s| Arc::new(s.expect("every segment solved"))) {
        let s1 = sol.clone();
        values.push(Arc::new(move |t| s1.eval(t)));
        derivs.push(Arc::new(move |t| sol.eval_derivative(t)));
    }
    PiecewiseC1Fn::new(grid.clone(), dim, values, derivs)
}

fn ode_options(problem: &BolzaProblem) -> OdeOptions {
    let mut opts = problem.ode;
    if let Some(bound) = problem.state_guard {
        opts.guard = Some(bound);
    }
    opts
}

/// Solves `d̲x = f(t, x, u(t), π)`, `x(0) = ξ₀`, on the grid of `u`.
pub fn integrate_cauchy(problem: &BolzaProblem, u: &PiecewiseFn, pi: &[f64]) -> Result<PiecewiseC1Fn> {
    let d = problem.dims();
    if u.dim() != d.control {
        return Err(OcError::dim("control", d.control, u.dim()));
    }
    if pi.len() != d.param {
        return Err(OcError::dim("parameter", d.param, pi.len()));
    }
    let model = problem.model.clone();
    let pi = Arc::new(pi.to_vec());
    let u = u.normalized();
    solve_on_grid(
        u.grid(),
        d.state,
        problem.initial_state(&pi),
        false,
        |i| {
            let (model, pi, seg) = (model.clone(), pi.clone(), u.segment(i).clone());
            Arc::new(move |t, x| model.vector_field(t, x, &seg(t), &pi))
        },
        &ode_options(problem),
    )
}

/// Simulates `u` and packages the resulting process.
pub fn simulate(problem: &BolzaProblem, u: &PiecewiseFn, pi: &[f64]) -> Result<Process> {
    let x = integrate_cauchy(problem, u, pi)?;
    Ok(Process::new(x, u.normalized(), pi.to_vec()))
}

/// `Φ(x)(t) = ξ₀ + ∫₀ᵗ f(s, x(s), u(s), π) ds`.
pub fn picard_operator(problem: &BolzaProblem, x: &PiecewiseC1Fn, u: &PiecewiseFn, pi: &[f64]) -> Result<PiecewiseC1Fn> {
    let d = problem.dims();
    if x.dim() != d.state {
        return Err(OcError::dim("state", d.state, x.dim()));
    }
    let grid = merge_grids(x.grid(), u.grid())?;
    let xg = x.on_grid(&grid)?;
    let ug = u.on_grid(&grid)?;
    let model = problem.model.clone();
    let pi = Arc::new(pi.to_vec());
    let quad = problem.quadrature;
    if let Some(bound) = problem.state_guard {
        if x.sup_norm_estimate() > bound {
            return Err(OcError::Integration {
                time: 0.0,
                reason: "state trajectory outside the guard region".into(),
            });
        }
    }
    let mut base = problem.initial_state(&pi);
    let mut values: Vec<SegmentFn> = Vec::new();
    let mut derivs: Vec<SegmentFn> = Vec::new();
    for i in 0..grid.num_segments() {
        let (a, b) = grid.segment_bounds(i);
        let integrand: Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync> = {
            let (model, pi, xs, us) = (model.clone(), pi.clone(), xg.value_segment(i).clone(), ug.segment(i).clone());
            Arc::new(move |s| model.vector_field(s, &xs(s), &us(s), &pi))
        };
        let start = base.clone();
        let n = d.state;
        {
            let integrand = integrand.clone();
            values.push(Arc::new(move |t| {
                let inc = integrate_vec(|s| integrand(s), a, t.max(a), n, &quad).unwrap_or_else(|_| vec![f64::NAN; n]);
                start.iter().zip(inc).map(|(s, v)| s + v).collect()
            }));
        }
        {
            let integrand = integrand.clone();
            derivs.push(Arc::new(move |t| integrand(t)));
        }
        let inc = integrate_vec(|s| integrand(s), a, b, n, &quad)?;
        for (bv, v) in base.iter_mut().zip(inc) {
            *bv += v;
        }
    }
    PiecewiseC1Fn::new(grid, d.state, values, derivs)
}

trait SupEstimate {
    fn sup_norm_estimate(&self) -> f64;
}

impl SupEstimate for PiecewiseC1Fn {
    fn sup_norm_estimate(&self) -> f64 {
        // Guard checks use the sup-norm of the components.
        let p = self.as_piecewise();
        p.grid()
            .sample_times(16)
            .into_iter()
            .map(|t| p.value_at(t).iter().fold(0.0f64, |m, v| m.max(v.abs())))
            .fold(0.0, f64::max)
    }
}

/// `S = ((tᵢ, vᵢ))`, `0 < t₁ ≤ … ≤ t_N < T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpikeList {
    spikes: Vec<(f64, Vec<f64>)>,
    horizon: f64,
    delta: f64,
}

impl SpikeList {
    pub fn new(spikes: Vec<(f64, Vec<f64>)>, horizon: f64, control_set: &ControlSet) -> Result<Self> {
        if spikes.is_empty() {
            return Err(OcError::domain("spike list must not be empty"));
        }
        let tol = BREAKPOINT_TOL * horizon;
        for (i, (t, v)) in spikes.iter().enumerate() {
            if !(*t > 0.0 && *t < horizon) {
                return Err(OcError::domain(format!("spike time {t} not inside ]0, {horizon}[")));
            }
            if i > 0 && *t < spikes[i - 1].0 - tol {
                return Err(OcError::domain("spike times must be nondecreasing"));
            }
            if !control_set.contains(v, 0.0) {
                return Err(OcError::domain(format!("spike value {v:?} outside the control set")));
            }
        }
        let dim = spikes[0].1.len();
        if let Some((_, v)) = spikes.iter().find(|(_, v)| v.len() != dim) {
            return Err(OcError::dim("spike value", dim, v.len()));
        }
        let delta = spikes
            .windows(2)
            .map(|w| w[1].0 - w[0].0)
            .filter(|g| *g > tol)
            .fold(f64::INFINITY, f64::min);
        Ok(Self { spikes, horizon, delta })
    }

    pub fn len(&self) -> usize {
        self.spikes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spikes.is_empty()
    }

    pub fn spikes(&self) -> &[(f64, Vec<f64>)] {
        &self.spikes
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// `δ(S)`: smallest positive gap between spike times, `+∞` without one.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    fn same_time(&self, i: usize, j: usize) -> bool {
        (self.spikes[i].0 - self.spikes[j].0).abs() <= BREAKPOINT_TOL * self.horizon
    }
}

/// Amplitudes `a ∈ ℝᴺ₊` applied to a spike list, with the derived stacking
/// offsets `bᵢ(a)` and intervals `Iᵢ(a) = [tᵢ + bᵢ, tᵢ + bᵢ + aᵢ[`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeedleVariation {
    pub spikes: SpikeList,
    pub amplitudes: Vec<f64>,
    pub offsets: Vec<f64>,
    pub intervals: Vec<(f64, f64)>,
}

impl NeedleVariation {
    pub fn new(spikes: SpikeList, amplitudes: Vec<f64>) -> Result<Self> {
        let n = spikes.len();
        if amplitudes.len() != n {
            return Err(OcError::dim("needle amplitudes", n, amplitudes.len()));
        }
        if amplitudes.iter().any(|a| !(*a >= 0.0)) {
            return Err(OcError::domain("needle amplitudes must be nonnegative"));
        }
        let l1: f64 = amplitudes.iter().sum();
        if l1 > spikes.delta() * (1.0 + 1e-12) {
            return Err(OcError::domain(format!(
                "‖a‖₁ = {l1} exceeds δ(S) = {}; needle intervals could overlap",
                spikes.delta()
            )));
        }
        // J(i) = { j < i : t_j = t_i }, in list order.
        let offsets: Vec<f64> = (0..n)
            .map(|i| (0..i).filter(|&j| spikes.same_time(i, j)).map(|j| amplitudes[j]).sum())
            .collect();
        let intervals: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let start = spikes.spikes[i].0 + offsets[i];
                (start, start + amplitudes[i])
            })
            .collect();
        let horizon = spikes.horizon();
        if let Some((_, end)) = intervals.iter().find(|(_, e)| *e > horizon * (1.0 + 1e-15)) {
            return Err(OcError::domain(format!("needle interval ends at {end}, past the horizon {horizon}")));
        }
        Ok(Self {
            spikes,
            amplitudes,
            offsets,
            intervals,
        })
    }

    pub fn l1_norm(&self) -> f64 {
        self.amplitudes.iter().sum()
    }

    /// Intervals wider than the breakpoint tolerance, with spike index.
    pub fn active_intervals(&self) -> Vec<(usize, f64, f64)> {
        let tol = BREAKPOINT_TOL * self.spikes.horizon();
        self.intervals
            .iter()
            .enumerate()
            .filter(|(_, (a, b))| b - a > tol)
            .map(|(i, (a, b))| (i, *a, *b))
            .collect()
    }

    fn grid(&self) -> Result<Grid> {
        let pts: Vec<f64> = self.active_intervals().iter().flat_map(|(_, a, b)| [*a, *b]).collect();
        Grid::with_interior(self.spikes.horizon(), &pts)
    }

    /// Spike whose interval contains the segment `[a, b]`, if any.
    fn spike_covering(&self, a: f64, b: f64) -> Option<usize> {
        let mid = 0.5 * (a + b);
        self.active_intervals()
            .into_iter()
            .find(|(_, lo, hi)| mid >= *lo && mid < *hi)
            .map(|(i, _, _)| i)
    }
}

/// `u_a = vᵢ` on `Iᵢ(a)`, `u₀` elsewhere.
pub fn needle_control(u0: &PiecewiseFn, nv: &NeedleVariation) -> Result<PiecewiseFn> {
    if let Some((_, v)) = nv.spikes.spikes().first() {
        if v.len() != u0.dim() {
            return Err(OcError::dim("spike value", u0.dim(), v.len()));
        }
    }
    let grid = merge_grids(u0.grid(), &nv.grid()?)?;
    let base = u0.normalized().on_grid(&grid)?;
    let segments = (0..grid.num_segments())
        .map(|j| {
            let (a, b) = grid.segment_bounds(j);
            match nv.spike_covering(a, b) {
                Some(i) => {
                    let v = nv.spikes.spikes()[i].1.clone();
                    Arc::new(move |_| v.clone()) as SegmentFn
                }
                None => base.segment(j).clone(),
            }
        })
        .collect();
    PiecewiseFn::new(grid, u0.dim(), segments)
}

fn state_jacobian(problem: &BolzaProblem, t: f64, x: &[f64], u: &[f64], pi: &[f64]) -> DMatrix<f64> {
    problem.model.vector_field_partials(t, x, u, pi).dx
}

fn flatten(m: &DMatrix<f64>) -> Vec<f64> {
    m.as_slice().to_vec()
}

fn unflatten(n: usize, v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(n, n, v)
}

/// Fundamental matrix `Y` of the linearized equation along a reference
/// process, `d̲Y = D₂f(t, x₀, u₀, π)·Y`, `Y(0) = I`; `R(t, s) = Y(t)·Y(s)⁻¹`.
#[derive(Debug, Clone)]
pub struct Resolvent {
    n: usize,
    fundamental: PiecewiseC1Fn,
    terminal: DMatrix<f64>,
}

/// Condition number of `Y(s)` above which inverses are reported as unreliable.
pub const RESOLVENT_CONDITION_WARN: f64 = 1e12;

impl Resolvent {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn grid(&self) -> &Grid {
        self.fundamental.grid()
    }

    pub fn fundamental(&self, t: f64) -> DMatrix<f64> {
        unflatten(self.n, &self.fundamental.value_at(t))
    }

    /// `R(t, s)`; identity when `t == s`.
    pub fn eval(&self, t: f64, s: f64) -> DMatrix<f64> {
        self.eval_with_condition(t, s).0
    }

    /// `R(t, s)` together with the condition number of the inverted factor.
    pub fn eval_with_condition(&self, t: f64, s: f64) -> (DMatrix<f64>, f64) {
        if t == s {
            return (DMatrix::identity(self.n, self.n), 1.0);
        }
        let ys = self.fundamental(s);
        let yt = if t == self.fundamental.horizon() { self.terminal.clone() } else { self.fundamental(t) };
        let sv = ys.clone().svd(false, false).singular_values;
        let cond = sv.max() / sv.min();
        let inv = ys.lu().try_inverse().unwrap_or_else(|| DMatrix::from_element(self.n, self.n, f64::NAN));
        (yt * inv, cond)
    }

    pub fn terminal_from(&self, s: f64) -> DMatrix<f64> {
        self.eval(self.fundamental.horizon(), s)
    }
}

pub fn resolvent_build(problem: &BolzaProblem, proc: &Process) -> Result<Resolvent> {
    check_process_dims(problem, proc)?;
    let n = problem.dims().state;
    let (grid, segs) = proc.segments()?;
    let pi = Arc::new(proc.pi.clone());
    let p = Arc::new(problem.clone());
    let identity = flatten(&DMatrix::identity(n, n));
    let mut opts = ode_options(problem);
    opts.guard = None;
    let fundamental = solve_on_grid(
        &grid,
        n * n,
        identity,
        false,
        |i| {
            let (xs, _, us) = segs[i].clone();
            let (p, pi) = (p.clone(), pi.clone());
            Arc::new(move |t, y| {
                let a = state_jacobian(&p, t, &xs(t), &us(t), &pi);
                flatten(&(a * unflatten(n, y)))
            })
        },
        &opts,
    )?;
    let terminal = unflatten(n, &fundamental.value_at(problem.horizon));
    Ok(Resolvent {
        n,
        fundamental,
        terminal,
    })
}

/// Needle mismatch `Δ_a(t) = f(t, x₀, vᵢ) − f(t, x₀, u₀)` on `Iᵢ(a)`, zero elsewhere.
fn needle_mismatch(problem: &BolzaProblem, proc: &Process, nv: &NeedleVariation) -> Result<(Grid, Vec<Option<SegmentFn>>)> {
    let (pgrid, _) = proc.segments()?;
    let grid = merge_grids(&pgrid, &nv.grid()?)?;
    let x = proc.x.on_grid(&grid)?;
    let u = proc.u.on_grid(&grid)?;
    let pi = Arc::new(proc.pi.clone());
    let mut out = Vec::with_capacity(grid.num_segments());
    for j in 0..grid.num_segments() {
        let (a, b) = grid.segment_bounds(j);
        out.push(nv.spike_covering(a, b).map(|i| {
            let v = nv.spikes.spikes()[i].1.clone();
            let (model, pi, xs, us) = (problem.model.clone(), pi.clone(), x.value_segment(j).clone(), u.segment(j).clone());
            Arc::new(move |t: f64| {
                let xv = xs(t);
                sub(&model.vector_field(t, &xv, &v, &pi), &model.vector_field(t, &xv, &us(t), &pi))
            }) as SegmentFn
        }));
    }
    Ok((grid, out))
}

/// `z_a(t) = ∫₀ᵗ R(t, s)·Δ_a(s) ds`, the solution of the linearized equation
/// forced by the needle mismatch, with `z_a(0) = 0`.
pub fn linearized_inhomogeneous(problem: &BolzaProblem, proc: &Process, nv: &NeedleVariation) -> Result<PiecewiseC1Fn> {
    let res = Arc::new(resolvent_build(problem, proc)?);
    let n = problem.dims().state;
    let (grid, mismatch) = needle_mismatch(problem, proc, nv)?;
    let x = proc.x.on_grid(&grid)?;
    let u = proc.u.on_grid(&grid)?;
    let pi = Arc::new(proc.pi.clone());
    let quad = problem.quadrature;
    // Accumulated ∫ Y(s)⁻¹ Δ_a(s) ds at the start of each segment.
    let mut acc = vec![0.0; n];
    let mut values: Vec<SegmentFn> = Vec::new();
    let mut derivs: Vec<SegmentFn> = Vec::new();
    for (j, delta) in mismatch.into_iter().enumerate() {
        let (a, b) = grid.segment_bounds(j);
        let start = acc.clone();
        let pulled: Option<Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>> = delta.clone().map(|d| {
            let res = res.clone();
            Arc::new(move |s: f64| {
                let inv = res.fundamental(s).lu().try_inverse().unwrap_or_else(|| DMatrix::from_element(n, n, f64::NAN));
                (inv * DVector::from_vec(d(s))).as_slice().to_vec()
            }) as Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>
        });
        {
            let (res, pulled) = (res.clone(), pulled.clone());
            values.push(Arc::new(move |t| {
                let mut c = start.clone();
                if let Some(g) = &pulled {
                    if t > a {
                        let inc = integrate_vec(|s| g(s), a, t, n, &quad).unwrap_or_else(|_| vec![f64::NAN; n]);
                        for (ci, v) in c.iter_mut().zip(inc) {
                            *ci += v;
                        }
                    }
                }
                (res.fundamental(t) * DVector::from_vec(c)).as_slice().to_vec()
            }));
        }
        {
            let (p, pi, xs, us) = (problem.clone(), pi.clone(), x.value_segment(j).clone(), u.segment(j).clone());
            let values_j = values[j].clone();
            derivs.push(Arc::new(move |t| {
                let z = values_j(t);
                let jac = state_jacobian(&p, t, &xs(t), &us(t), &pi);
                let mut dz = (jac * DVector::from_vec(z)).as_slice().to_vec();
                if let Some(d) = &delta {
                    for (o, v) in dz.iter_mut().zip(d(t)) {
                        *o += v;
                    }
                }
                dz
            }));
        }
        if let Some(g) = &pulled {
            let inc = integrate_vec(|s| g(s), a, b, n, &quad)?;
            for (ci, v) in acc.iter_mut().zip(inc) {
                *ci += v;
            }
        }
    }
    PiecewiseC1Fn::new(grid, n, values, derivs)
}

/// The same `z_a` obtained by integrating
/// `d̲z = D₂f(t, x₀, u₀)·z + Δ_a(t)` directly.
pub fn linearized_inhomogeneous_direct(problem: &BolzaProblem, proc: &Process, nv: &NeedleVariation) -> Result<PiecewiseC1Fn> {
    let n = problem.dims().state;
    let (grid, mismatch) = needle_mismatch(problem, proc, nv)?;
    let x = proc.x.on_grid(&grid)?;
    let u = proc.u.on_grid(&grid)?;
    let pi = Arc::new(proc.pi.clone());
    let p = Arc::new(problem.clone());
    let mut opts = ode_options(problem);
    opts.guard = None;
    solve_on_grid(
        &grid,
        n,
        vec![0.0; n],
        false,
        |j| {
            let (p, pi, xs, us, delta) = (p.clone(), pi.clone(), x.value_segment(j).clone(), u.segment(j).clone(), mismatch[j].clone());
            Arc::new(move |t, z| {
                let jac = state_jacobian(&p, t, &xs(t), &us(t), &pi);
                let mut dz = (jac * DVector::from_column_slice(z)).as_slice().to_vec();
                if let Some(d) = &delta {
                    for (o, v) in dz.iter_mut().zip(d(t)) {
                        *o += v;
                    }
                }
                dz
            })
        },
        &opts,
    )
}

/// The linear map `𝔏 : a ↦ Σ aᵢ R(T, tᵢ)[f(tᵢ, x₀(tᵢ), vᵢ) − f(tᵢ, x₀(tᵢ), u₀(tᵢ))]`
/// as an `n × N` matrix.
pub fn first_order_map(problem: &BolzaProblem, proc: &Process, spikes: &SpikeList) -> Result<DMatrix<f64>> {
    let res = resolvent_build(problem, proc)?;
    Ok(first_order_map_with(problem, proc, spikes, &res))
}

fn first_order_map_with(problem: &BolzaProblem, proc: &Process, spikes: &SpikeList, res: &Resolvent) -> DMatrix<f64> {
    let n = problem.dims().state;
    let mut map = DMatrix::zeros(n, spikes.len());
    for (i, (t, v)) in spikes.spikes().iter().enumerate() {
        let x = proc.x.value_at(*t);
        let u = proc.u.value_at(*t);
        let jump = sub(&problem.model.vector_field(*t, &x, v, &proc.pi), &problem.model.vector_field(*t, &x, &u, &proc.pi));
        let col = res.terminal_from(*t) * DVector::from_vec(jump);
        map.set_column(i, &col);
    }
    map
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowStatus {
    Ok,
    Failed(String),
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualRow {
    pub amplitudes: Vec<f64>,
    pub norm_a1: f64,
    pub residual_norm: f64,
    pub gronwall_ratio: f64,
    pub status: RowStatus,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualStudy {
    pub rows: Vec<ResidualRow>,
    /// Measured `sup ‖f(t, x₀, vᵢ) − f(t, x₀, u₀)‖`.
    pub mismatch_bound: f64,
    /// Measured `sup ‖D₂f‖` along the reference.
    pub lipschitz: f64,
    /// `k₁ = k·e^{LT}`.
    pub gronwall_bound: f64,
    /// Least-squares slope of `log ‖ϱ(a)‖` against `log ‖a‖₁`.
    pub decay_order: Option<f64>,
    /// Largest `‖a‖₁` at which the perturbed trajectory was still computed.
    pub r2_guard: Option<f64>,
}

impl ResidualStudy {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("norm_a1,residual_norm,gronwall_ratio,status\n");
        for r in &self.rows {
            let status = match &r.status {
                RowStatus::Ok => "ok".to_string(),
                RowStatus::Failed(msg) => format!("failed: {}", msg.replace([',', '\n'], ";")),
            };
            s.push_str(&format!(
                "{},{},{},{}\n",
                crate::piecewise::fmt_real(r.norm_a1),
                crate::piecewise::fmt_real(r.residual_norm),
                crate::piecewise::fmt_real(r.gronwall_ratio),
                status
            ));
        }
        s
    }
}

/// `x_a − x₀`, integrated as its own ODE so the error control acts on the
/// perturbation scale rather than the trajectory scale.
pub fn perturbation_path(problem: &BolzaProblem, proc: &Process, nv: &NeedleVariation) -> Result<PiecewiseC1Fn> {
    let n = problem.dims().state;
    let ua = needle_control(&proc.u, nv)?;
    let grid = merge_grids(&merge_grids(proc.x.grid(), proc.u.grid())?, ua.grid())?;
    let x = proc.x.on_grid(&grid)?;
    let u0 = proc.u.on_grid(&grid)?;
    let ua = ua.on_grid(&grid)?;
    let pi = Arc::new(proc.pi.clone());
    let model = problem.model.clone();
    let scale = nv.l1_norm().max(f64::MIN_POSITIVE);
    let mut opts = ode_options(problem);
    opts.atol = 1e-14 * scale;
    opts.guard = problem.state_guard;
    solve_on_grid(
        &grid,
        n,
        vec![0.0; n],
        false,
        |j| {
            let (model, pi, xs, us0, usa) = (model.clone(), pi.clone(), x.value_segment(j).clone(), u0.segment(j).clone(), ua.segment(j).clone());
            Arc::new(move |t, d| {
                let x0 = xs(t);
                let xa: Vec<f64> = x0.iter().zip(d).map(|(a, b)| a + b).collect();
                sub(&model.vector_field(t, &xa, &usa(t), &pi), &model.vector_field(t, &x0, &us0(t), &pi))
            })
        },
        &opts,
    )
}

/// For each amplitude vector `a`, the normalized first-order remainder
/// `ϱ(a) = (x_a(T) − x₀(T) − 𝔏a)/‖a‖₁` and the Gronwall ratio
/// `‖x_a − x₀‖_∞/‖a‖₁`.
pub fn expansion_residual_study(
    problem: &BolzaProblem,
    proc: &Process,
    spikes: &SpikeList,
    amplitudes: &[Vec<f64>],
) -> Result<ResidualStudy> {
    use rayon::prelude::*;

    let res = resolvent_build(problem, proc)?;
    let map = first_order_map_with(problem, proc, spikes, &res);
    let (grid, segs) = proc.segments()?;
    let model = &problem.model;

    let mut k_bound = 0.0f64;
    let mut lip = 0.0f64;
    for (i, (xs, _, us)) in segs.iter().enumerate() {
        let (a, b) = grid.segment_bounds(i);
        for j in 0..=crate::problem::RESIDUAL_SAMPLES {
            let t = a + (b - a) * j as f64 / crate::problem::RESIDUAL_SAMPLES as f64;
            let (x, u) = (xs(t), us(t));
            let f0 = model.vector_field(t, &x, &u, &proc.pi);
            lip = lip.max(model.vector_field_partials(t, &x, &u, &proc.pi).dx.norm());
            for (_, v) in spikes.spikes() {
                k_bound = k_bound.max(norm(&sub(&model.vector_field(t, &x, v, &proc.pi), &f0)));
                lip = lip.max(model.vector_field_partials(t, &x, v, &proc.pi).dx.norm());
            }
        }
    }
    let gronwall_bound = k_bound * (lip * problem.horizon).exp();

    let rows: Vec<ResidualRow> = amplitudes
        .par_iter()
        .map(|a| {
            let norm_a1: f64 = a.iter().map(|v| v.abs()).sum();
            let failed = |msg: String| ResidualRow {
                amplitudes: a.clone(),
                norm_a1,
                residual_norm: f64::NAN,
                gronwall_ratio: f64::NAN,
                status: RowStatus::Failed(msg),
            };
            let nv = match NeedleVariation::new(spikes.clone(), a.clone()) {
                Ok(nv) => nv,
                Err(e) => return failed(e.to_string()),
            };
            if norm_a1 == 0.0 {
                return ResidualRow {
                    amplitudes: a.clone(),
                    norm_a1,
                    residual_norm: 0.0,
                    gronwall_ratio: 0.0,
                    status: RowStatus::Ok,
                };
            }
            match perturbation_path(problem, proc, &nv) {
                Ok(d) => {
                    let d_t = d.value_at(problem.horizon);
                    let la = &map * DVector::from_column_slice(a);
                    let rho: Vec<f64> = d_t.iter().zip(la.iter()).map(|(x, y)| (x - y) / norm_a1).collect();
                    ResidualRow {
                        amplitudes: a.clone(),
                        norm_a1,
                        residual_norm: norm(&rho),
                        gronwall_ratio: d.as_piecewise().sup_norm() / norm_a1,
                        status: RowStatus::Ok,
                    }
                }
                Err(e) => failed(e.to_string()),
            }
        })
        .collect();

    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.status == RowStatus::Ok && r.norm_a1 > 0.0 && r.residual_norm > 0.0)
        .map(|r| (r.norm_a1.ln(), r.residual_norm.ln()))
        .collect();
    let decay_order = (pts.len() >= 2).then(|| {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    });
    let r2_guard = rows
        .iter()
        .filter(|r| r.status == RowStatus::Ok)
        .map(|r| r.norm_a1)
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
    Ok(ResidualStudy {
        rows,
        mismatch_bound: k_bound,
        lipschitz: lip,
        gronwall_bound,
        decay_order,
        r2_guard,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtins;
    use crate::piecewise::Side;

    fn spikes(list: Vec<(f64, f64)>) -> SpikeList {
        SpikeList::new(list.into_iter().map(|(t, v)| (t, vec![v])).collect(), 1.0, &ControlSet::open()).unwrap()
    }

    #[test]
    fn zero_amplitude_keeps_control() {
        let u0 = PiecewiseFn::from_fn(1.0, 1, |t| vec![t]).unwrap();
        let nv = NeedleVariation::new(spikes(vec![(0.5, 3.0)]), vec![0.0]).unwrap();
        let ua = needle_control(&u0, &nv).unwrap();
        assert_eq!(ua.grid().num_segments(), 1);
        for t in [0.0, 0.5, 0.7, 1.0] {
            assert_eq!(ua.eval(t, Side::Auto).unwrap(), u0.eval(t, Side::Auto).unwrap());
        }
    }

    #[test]
    fn single_needle_interval() {
        let u0 = PiecewiseFn::constant(1.0, vec![0.0]).unwrap();
        let nv = NeedleVariation::new(spikes(vec![(0.5, 7.0)]), vec![0.1]).unwrap();
        let ua = needle_control(&u0, &nv).unwrap();
        assert_eq!(ua.eval(0.5, Side::Auto).unwrap(), vec![7.0]);
        assert_eq!(ua.eval(0.55, Side::Auto).unwrap(), vec![7.0]);
        assert_eq!(ua.eval(0.6, Side::Auto).unwrap(), vec![0.0]);
        assert_eq!(ua.eval(0.6, Side::Left).unwrap(), vec![7.0]);
        assert_eq!(ua.eval(0.49, Side::Auto).unwrap(), vec![0.0]);
    }

    #[test]
    fn stacked_spikes_follow_list_order() {
        let s = spikes(vec![(0.5, 1.0), (0.5, 2.0)]);
        assert!(s.delta().is_infinite());
        let nv = NeedleVariation::new(s, vec![0.05, 0.05]).unwrap();
        assert_eq!(nv.offsets, vec![0.0, 0.05]);
        assert!((nv.intervals[0].0 - 0.5).abs() < 1e-15 && (nv.intervals[0].1 - 0.55).abs() < 1e-15);
        assert!((nv.intervals[1].0 - 0.55).abs() < 1e-15 && (nv.intervals[1].1 - 0.6).abs() < 1e-15);
        let u0 = PiecewiseFn::constant(1.0, vec![0.0]).unwrap();
        let ua = needle_control(&u0, &nv).unwrap();
        assert_eq!(ua.value_at(0.52), vec![1.0]);
        assert_eq!(ua.value_at(0.57), vec![2.0]);
    }

    #[test]
    fn amplitude_above_delta_rejected() {
        let s = spikes(vec![(0.2, 1.0), (0.3, 1.0)]);
        assert!((s.delta() - 0.1).abs() < 1e-15);
        assert!(NeedleVariation::new(s, vec![0.08, 0.05]).is_err());
    }

    #[test]
    fn bad_spike_lists_rejected() {
        let open = ControlSet::open();
        assert!(SpikeList::new(vec![(0.0, vec![1.0])], 1.0, &open).is_err());
        assert!(SpikeList::new(vec![(0.6, vec![1.0]), (0.4, vec![1.0])], 1.0, &open).is_err());
        let bx = ControlSet::Box {
            lower: vec![-1.0],
            upper: vec![1.0],
        };
        assert!(SpikeList::new(vec![(0.5, vec![2.0])], 1.0, &bx).is_err());
    }

    #[test]
    fn steering_reaches_target() {
        let p = builtins::steering();
        let u = PiecewiseFn::constant(1.0, vec![0.7]).unwrap();
        let x = integrate_cauchy(&p, &u, &[0.7]).unwrap();
        assert!((x.value_at(1.0)[0] - 0.7).abs() < 1e-10);
        assert!((x.value_at(0.3)[0] - 0.21).abs() < 1e-12);
    }

    #[test]
    fn integrator_first_order_map() {
        let p = builtins::steering();
        let proc = builtins::steering_optimum(1.0, 0.0, 1.0).unwrap();
        let s = spikes(vec![(0.5, 3.0)]);
        let map = first_order_map(&p, &proc, &s).unwrap();
        assert!((map[(0, 0)] - 2.0).abs() < 1e-14);
        let nv = NeedleVariation::new(s, vec![0.1]).unwrap();
        let z = linearized_inhomogeneous(&p, &proc, &nv).unwrap();
        assert!((z.value_at(1.0)[0] - 0.2).abs() < 1e-13);
        assert_eq!(z.value_at(0.0), vec![0.0]);
    }

    #[test]
    fn control_independent_field_has_zero_map() {
        let p = builtins::constant_drift();
        let proc = builtins::constant_drift_optimum(1.0, 0.0, 0.4).unwrap();
        let s = spikes(vec![(0.3, 2.0), (0.6, -1.0)]);
        let map = first_order_map(&p, &proc, &s).unwrap();
        assert_eq!(map.norm(), 0.0);
        let nv = NeedleVariation::new(s.clone(), vec![0.1, 0.1]).unwrap();
        assert_eq!(linearized_inhomogeneous(&p, &proc, &nv).unwrap().as_piecewise().sup_norm(), 0.0);
        let study = expansion_residual_study(&p, &proc, &s, &[vec![0.1, 0.1], vec![0.01, 0.02]]).unwrap();
        assert!(study.rows.iter().all(|r| r.residual_norm == 0.0));
    }

    #[test]
    fn resolvent_identity_without_state_dependence() {
        let p = builtins::lq_scalar();
        let proc = builtins::lq_scalar_optimum(1.0, 1.0, 0.0, 1.0).unwrap();
        let r = resolvent_build(&p, &proc).unwrap();
        assert_eq!(r.eval(0.7, 0.2), DMatrix::identity(1, 1));
        assert_eq!(r.eval(0.4, 0.4), DMatrix::identity(1, 1));
    }

    #[test]
    fn csv_has_header_and_rows() {
        let p = builtins::lq_scalar();
        let proc = builtins::lq_scalar_optimum(1.0, 1.0, 0.0, 1.0).unwrap();
        let s = spikes(vec![(0.5, 1.0)]);
        let study = expansion_residual_study(&p, &proc, &s, &[vec![0.1], vec![2.0]]).unwrap();
        let csv = study.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "norm_a1,residual_norm,gronwall_ratio,status");
        assert!(lines[1].ends_with(",ok"));
        assert!(lines[2].contains("failed"));
    }
}
