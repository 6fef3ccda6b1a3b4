//! Parameterized Bolza problems, their Hamiltonian, admissible processes and
//! the lift to Mayer form.
//!
//! Sign convention: every problem is a *maximization*. Users with a cost to
//! minimize pass its negative as the running and terminal rewards.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{OcError, Result};
use crate::ode::OdeOptions;
use crate::piecewise::{dot, merge_grids, norm, sub, Grid, PiecewiseC1Fn, PiecewiseFn, SegmentFn};
use crate::quadrature::{integrate_scalar, QuadratureOptions};

/// Default absolute feasibility tolerance for dynamics and equality constraints.
pub const FEASIBILITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DerivMode {
    Analytic,
    DualAd,
    CentralFd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Dims {
    pub state: usize,
    pub control: usize,
    pub param: usize,
    /// Number of inequality constraints `g¹ … gᵐ` (the reward `g⁰` is extra).
    pub inequalities: usize,
    pub equalities: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarPartials {
    pub dt: f64,
    pub dx: Vec<f64>,
    pub du: Vec<f64>,
    pub dp: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldPartials {
    pub dt: Vec<f64>,
    pub dx: DMatrix<f64>,
    pub du: DMatrix<f64>,
    pub dp: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointPartials {
    pub dx: Vec<f64>,
    pub dp: Vec<f64>,
}

fn fd_step(arg: &[f64]) -> f64 {
    1e-6 * (1.0 + norm(arg))
}

fn fd_gradient(point: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let h = fd_step(point);
    let mut p = point.to_vec();
    (0..point.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let fp = f(&p);
            p[i] = orig - h;
            let fm = f(&p);
            p[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

fn fd_jacobian(rows: usize, point: &[f64], f: impl Fn(&[f64]) -> Vec<f64>) -> DMatrix<f64> {
    let h = fd_step(point);
    let mut p = point.to_vec();
    let mut jac = DMatrix::zeros(rows, point.len());
    for j in 0..point.len() {
        let orig = p[j];
        p[j] = orig + h;
        let fp = f(&p);
        p[j] = orig - h;
        let fm = f(&p);
        p[j] = orig;
        for i in 0..rows {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

/// Data of a parameterized problem: running reward `f⁰(t, ξ, ζ, π)`, vector
/// field `f`, terminal functions `g⁰ … gᵐ` (with `g⁰` the terminal reward and
/// `gᵅ ≥ 0` for `α ≥ 1`) and equality constraints `h¹ … h^q` (indexed from 0
/// here).
///
/// Partial derivatives default to central differences with step
/// `1e-6·(1 + ‖arg‖)`; analytic or AD-backed models override them.
pub trait OcpModel: Send + Sync {
    fn dims(&self) -> Dims;
    fn running_reward(&self, t: f64, x: &[f64], u: &[f64], p: &[f64]) -> f64;
    fn vector_field(&self, t: f64, x: &[f64], u: &[f64], p: &[f64]) -> Vec<f64>;
    /// `gᵅ(ξ, π)` for `α = 0 ..= m`.
    fn terminal(&self, alpha: usize, x: &[f64], p: &[f64]) -> f64;
    /// `h^{β+1}(ξ, π)` for `β = 0 .. q`.
    fn equality(&self, beta: usize, x: &[f64], p: &[f64]) -> f64;

    fn deriv_mode(&self) -> DerivMode {
        DerivMode::CentralFd
    }

    fn running_reward_partials(&self, t: f64, x: &[f64], u: &[f64], p: &[f64]) -> ScalarPartials {
        let dt = {
            let h = 1e-6 * (1.0 + t.abs());
            (self.running_reward(t + h, x, u, p) - self.running_reward(t - h, x, u, p)) / (2.0 * h)
        };
        ScalarPartials {
            dt,
            dx: fd_gradient(x, |xx| self.running_reward(t, xx, u, p)),
            du: fd_gradient(u, |uu| self.running_reward(t, x, uu, p)),
            dp: fd_gradient(p, |pp| self.running_reward(t, x, u, pp)),
        }
    }

    fn vector_field_partials(&self, t: f64, x: &[f64], u: &[f64], p: &[f64]) -> FieldPartials {
        let n = x.len();
        let h = 1e-6 * (1.0 + t.abs());
        let fp = self.vector_field(t + h, x, u, p);
        let fm = self.vector_field(t - h, x, u, p);
        FieldPartials {
            dt: fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect(),
            dx: fd_jacobian(n, x, |xx| self.vector_field(t, xx, u, p)),
            du: fd_jacobian(n, u, |uu| self.vector_field(t, x, uu, p)),
            dp: fd_jacobian(n, p, |pp| self.vector_field(t, x, u, pp)),
        }
    }

    fn terminal_partials(&self, alpha: usize, x: &[f64], p: &[f64]) -> PointPartials {
        PointPartials {
            dx: fd_gradient(x, |xx| self.terminal(alpha, xx, p)),
            dp: fd_gradient(p, |pp| self.terminal(alpha, x, pp)),
        }
    }

    fn equality_partials(&self, beta: usize, x: &[f64], p: &[f64]) -> PointPartials {
        PointPartials {
            dx: fd_gradient(x, |xx| self.equality(beta, xx, p)),
            dp: fd_gradient(p, |pp| self.equality(beta, x, pp)),
        }
    }

    /// Closed-form maximizer of `ζ ↦ λ₀ f⁰ + adjoint·f` over the control set,
    /// when one is known.
    fn hamiltonian_argmax(&self, _t: f64, _x: &[f64], _lambda0: f64, _adjoint: &[f64], _p: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ControlSet {
    /// Componentwise bounds `lower ≤ ζ ≤ upper`.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// All of ℝ^mu. Maximum-principle scans search a cube of half-width
    /// `scan_radius` around the candidate control.
    Open { scan_radius: f64 },
}

impl ControlSet {
    pub fn open() -> Self {
        ControlSet::Open { scan_radius: 5.0 }
    }

    pub fn center(&self, mu: usize) -> Vec<f64> {
        match self {
            ControlSet::Box { lower, upper } => lower.iter().zip(upper).map(|(a, b)| 0.5 * (a + b)).collect(),
            ControlSet::Open { .. } => vec![0.0; mu],
        }
    }

    pub fn project(&self, u: &[f64]) -> Vec<f64> {
        match self {
            ControlSet::Box { lower, upper } => u
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(v, (a, b))| v.clamp(*a, *b))
                .collect(),
            ControlSet::Open { .. } => u.to_vec(),
        }
    }

    pub fn contains(&self, u: &[f64], tol: f64) -> bool {
        match self {
            ControlSet::Box { lower, upper } => u
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(v, (a, b))| *v >= a - tol && *v <= b + tol),
            ControlSet::Open { .. } => u.iter().all(|v| v.is_finite()),
        }
    }

    /// Whether `u` is an interior point (a neighborhood of `u` lies in the set).
    pub fn is_interior(&self, u: &[f64], tol: f64) -> bool {
        match self {
            ControlSet::Box { lower, upper } => u
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(v, (a, b))| *v > a + tol && *v < b - tol),
            ControlSet::Open { .. } => true,
        }
    }

    /// Axis-aligned search box around `u`, used by maximum-principle scans.
    pub fn scan_box(&self, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        match self {
            ControlSet::Box { lower, upper } => (lower.clone(), upper.clone()),
            ControlSet::Open { scan_radius } => (
                u.iter().map(|v| v - scan_radius).collect(),
                u.iter().map(|v| v + scan_radius).collect(),
            ),
        }
    }
}

pub type InitialMap = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

#[derive(Clone)]
pub enum InitialState {
    Fixed(Vec<f64>),
    /// Initial state depending on the parameter. Supported for simulation and
    /// values only; the envelope formula assumes a fixed initial state.
    Parametric(InitialMap),
}

#[derive(Clone)]
pub struct BolzaProblem {
    pub name: String,
    pub horizon: f64,
    pub initial: InitialState,
    pub model: Arc<dyn OcpModel>,
    pub control_set: ControlSet,
    /// Box guard `‖ξ‖_∞ ≤ bound` standing in for the open state set.
    pub state_guard: Option<f64>,
    pub feasibility_tol: f64,
    pub ode: OdeOptions,
    pub quadrature: QuadratureOptions,
}

impl std::fmt::Debug for BolzaProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BolzaProblem")
            .field("name", &self.name)
            .field("horizon", &self.horizon)
            .field("dims", &self.model.dims())
            .field("control_set", &self.control_set)
            .finish()
    }
}

impl BolzaProblem {
    /// Builds a problem and probes every callback at `(0, ξ₀, center(U), 0)`
    /// for dimensional consistency.
    pub fn new(
        name: impl Into<String>,
        horizon: f64,
        xi0: Vec<f64>,
        model: Arc<dyn OcpModel>,
        control_set: ControlSet,
    ) -> Result<Self> {
        let problem = Self {
            name: name.into(),
            horizon,
            initial: InitialState::Fixed(xi0),
            model,
            control_set,
            state_guard: None,
            feasibility_tol: FEASIBILITY_TOL,
            ode: OdeOptions::default(),
            quadrature: QuadratureOptions::default(),
        };
        problem.probe()?;
        Ok(problem)
    }

    pub fn with_parametric_initial(mut self, map: InitialMap) -> Result<Self> {
        self.initial = InitialState::Parametric(map);
        self.probe()?;
        Ok(self)
    }

    pub fn with_state_guard(mut self, bound: f64) -> Self {
        self.state_guard = Some(bound);
        self.ode.guard = Some(bound);
        self
    }

    pub fn dims(&self) -> Dims {
        self.model.dims()
    }

    pub fn initial_state(&self, pi: &[f64]) -> Vec<f64> {
        match &self.initial {
            InitialState::Fixed(v) => v.clone(),
            InitialState::Parametric(f) => f(pi),
        }
    }

    pub fn has_fixed_initial_state(&self) -> bool {
        matches!(self.initial, InitialState::Fixed(_))
    }

    fn probe(&self) -> Result<()> {
        let d = self.dims();
        if d.state == 0 {
            return Err(OcError::Config("state dimension must be at least 1".into()));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(OcError::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        let pi = vec![0.0; d.param];
        let x = self.initial_state(&pi);
        if x.len() != d.state {
            return Err(OcError::dim("initial state", d.state, x.len()));
        }
        if let ControlSet::Box { lower, upper } = &self.control_set {
            if lower.len() != d.control || upper.len() != d.control {
                return Err(OcError::dim("control box", d.control, lower.len()));
            }
            if lower.iter().zip(upper).any(|(a, b)| !(a <= b)) {
                return Err(OcError::Config("control box has lower > upper".into()));
            }
        }
        let u = self.control_set.center(d.control);
        let m = self.model.as_ref();
        let f = m.vector_field(0.0, &x, &u, &pi);
        if f.len() != d.state {
            return Err(OcError::dim("vector field", d.state, f.len()));
        }
        let fp = m.vector_field_partials(0.0, &x, &u, &pi);
        if fp.dx.shape() != (d.state, d.state) || fp.du.shape() != (d.state, d.control) || fp.dp.shape() != (d.state, d.param) {
            return Err(OcError::Config("vector field partials have inconsistent shapes".into()));
        }
        let r = m.running_reward_partials(0.0, &x, &u, &pi);
        if r.dx.len() != d.state || r.du.len() != d.control || r.dp.len() != d.param {
            return Err(OcError::Config("running reward partials have inconsistent shapes".into()));
        }
        for alpha in 0..=d.inequalities {
            let g = m.terminal_partials(alpha, &x, &pi);
            if g.dx.len() != d.state || g.dp.len() != d.param {
                return Err(OcError::Config(format!("terminal function {alpha} partials have inconsistent shapes")));
            }
        }
        for beta in 0..d.equalities {
            let h = m.equality_partials(beta, &x, &pi);
            if h.dx.len() != d.state || h.dp.len() != d.param {
                return Err(OcError::Config(format!("equality {} partials have inconsistent shapes", beta + 1)));
            }
        }
        Ok(())
    }

    pub fn hamiltonian(&self, lambda0: f64) -> Hamiltonian<'_> {
        Hamiltonian { problem: self, lambda0 }
    }
}

/// `H_B(t, ξ, ζ, p, λ₀) = λ₀ f⁰(t, ξ, ζ, π) + p·f(t, ξ, ζ, π)`.
#[derive(Clone, Copy)]
pub struct Hamiltonian<'a> {
    pub problem: &'a BolzaProblem,
    pub lambda0: f64,
}

impl Hamiltonian<'_> {
    pub fn value(&self, t: f64, x: &[f64], u: &[f64], adjoint: &[f64], pi: &[f64]) -> f64 {
        let m = &self.problem.model;
        let running = if self.lambda0 == 0.0 { 0.0 } else { self.lambda0 * m.running_reward(t, x, u, pi) };
        running + dot(adjoint, &m.vector_field(t, x, u, pi))
    }

    /// `D₃H = λ₀ D₃f⁰ + pᵀ D₃f`.
    pub fn control_gradient(&self, t: f64, x: &[f64], u: &[f64], adjoint: &[f64], pi: &[f64]) -> Vec<f64> {
        let m = &self.problem.model;
        let r = m.running_reward_partials(t, x, u, pi);
        let f = m.vector_field_partials(t, x, u, pi);
        (0..u.len())
            .map(|j| self.lambda0 * r.du[j] + (0..x.len()).map(|i| adjoint[i] * f.du[(i, j)]).sum::<f64>())
            .collect()
    }

    /// `D₂H = λ₀ D₂f⁰ + pᵀ D₂f`.
    pub fn state_gradient(&self, t: f64, x: &[f64], u: &[f64], adjoint: &[f64], pi: &[f64]) -> Vec<f64> {
        let m = &self.problem.model;
        let r = m.running_reward_partials(t, x, u, pi);
        let f = m.vector_field_partials(t, x, u, pi);
        (0..x.len())
            .map(|j| self.lambda0 * r.dx[j] + (0..x.len()).map(|i| adjoint[i] * f.dx[(i, j)]).sum::<f64>())
            .collect()
    }

    /// `∂₁H = λ₀ ∂₁f⁰ + p·∂₁f`.
    pub fn time_partial(&self, t: f64, x: &[f64], u: &[f64], adjoint: &[f64], pi: &[f64]) -> f64 {
        let m = &self.problem.model;
        let r = m.running_reward_partials(t, x, u, pi);
        let f = m.vector_field_partials(t, x, u, pi);
        self.lambda0 * r.dt + dot(adjoint, &f.dt)
    }
}

/// A state/control pair at a given parameter.
#[derive(Debug, Clone)]
pub struct Process {
    pub x: PiecewiseC1Fn,
    pub u: PiecewiseFn,
    pub pi: Vec<f64>,
}

impl Process {
    pub fn new(x: PiecewiseC1Fn, u: PiecewiseFn, pi: Vec<f64>) -> Self {
        Self { x, u, pi }
    }

    pub fn terminal_state(&self) -> Vec<f64> {
        self.x.value_at(self.x.horizon())
    }

    pub fn terminal_control(&self) -> Vec<f64> {
        self.u.value_at(self.u.horizon())
    }

    /// Merged grid of state and control plus per-segment evaluators
    /// `(x, d̲x, u)` on it.
    pub fn segments(&self) -> Result<(Grid, Vec<(SegmentFn, SegmentFn, SegmentFn)>)> {
        let grid = merge_grids(self.x.grid(), self.u.grid())?;
        let x = self.x.on_grid(&grid)?;
        let u = self.u.on_grid(&grid)?;
        let segs = (0..grid.num_segments())
            .map(|i| (x.value_segment(i).clone(), x.derivative_segment(i).clone(), u.segment(i).clone()))
            .collect();
        Ok((grid, segs))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FeasibilityReport {
    pub dynamics_residual: f64,
    pub worst_time: f64,
    pub initial_error: f64,
    /// `gⁱ(x(T), π)` for `i = 1 ..= m`; negative means violated.
    pub inequality_slacks: Vec<f64>,
    /// `|hʲ(x(T), π)|`.
    pub equality_violations: Vec<f64>,
    pub tol: f64,
    pub feasible: bool,
}

pub(crate) fn check_process_dims(problem: &BolzaProblem, proc: &Process) -> Result<()> {
    let d = problem.dims();
    if proc.x.dim() != d.state {
        return Err(OcError::dim("state trajectory", d.state, proc.x.dim()));
    }
    if proc.u.dim() != d.control {
        return Err(OcError::dim("control", d.control, proc.u.dim()));
    }
    if proc.pi.len() != d.param {
        return Err(OcError::dim("parameter", d.param, proc.pi.len()));
    }
    let tol = 1e-12 * problem.horizon;
    if (proc.x.horizon() - problem.horizon).abs() > tol || (proc.u.horizon() - problem.horizon).abs() > tol {
        return Err(OcError::domain("process horizon differs from problem horizon"));
    }
    Ok(())
}

/// Samples per merged-grid segment used by residual checks.
pub const RESIDUAL_SAMPLES: usize = 64;

pub fn validate_process(problem: &BolzaProblem, proc: &Process, tol: f64) -> Result<FeasibilityReport> {
    check_process_dims(problem, proc)?;
    let d = problem.dims();
    let model = &problem.model;
    let (grid, segs) = proc.segments()?;
    let mut worst = 0.0f64;
    let mut worst_time = 0.0;
    for (i, (xs, dxs, us)) in segs.iter().enumerate() {
        let (a, b) = grid.segment_bounds(i);
        for j in 0..=RESIDUAL_SAMPLES {
            let t = a + (b - a) * j as f64 / RESIDUAL_SAMPLES as f64;
            let x = xs(t);
            let r = norm(&sub(&dxs(t), &model.vector_field(t, &x, &us(t), &proc.pi)));
            if r > worst || !r.is_finite() {
                worst = if r.is_finite() { r } else { f64::INFINITY };
                worst_time = t;
            }
        }
    }
    let initial_error = norm(&sub(&proc.x.value_at(0.0), &problem.initial_state(&proc.pi)));
    let xt = proc.terminal_state();
    let inequality_slacks: Vec<f64> = (1..=d.inequalities).map(|i| model.terminal(i, &xt, &proc.pi)).collect();
    let equality_violations: Vec<f64> = (0..d.equalities).map(|j| model.equality(j, &xt, &proc.pi).abs()).collect();
    let feasible = worst <= tol
        && initial_error <= tol
        && inequality_slacks.iter().all(|g| *g >= -tol)
        && equality_violations.iter().all(|h| *h <= tol);
    Ok(FeasibilityReport {
        dynamics_residual: worst,
        worst_time,
        initial_error,
        inequality_slacks,
        equality_violations,
        tol,
        feasible,
    })
}

/// `J = ∫₀ᵀ f⁰(t, x, u, π) dt + g⁰(x(T), π)`.
pub fn criterion(problem: &BolzaProblem, proc: &Process) -> Result<f64> {
    check_process_dims(problem, proc)?;
    let model = &problem.model;
    let (grid, segs) = proc.segments()?;
    let mut running = 0.0;
    for (i, (xs, _, us)) in segs.iter().enumerate() {
        let (a, b) = grid.segment_bounds(i);
        running += integrate_scalar(|t| model.running_reward(t, &xs(t), &us(t), &proc.pi), a, b, &problem.quadrature)?;
    }
    Ok(running + model.terminal(0, &proc.terminal_state(), &proc.pi))
}

/// Bolza problem rewritten with state `(σ, ξ)`, `σ' = f⁰`, zero running
/// reward and terminal reward `σ + g⁰(ξ)`.
struct MayerLift {
    inner: Arc<dyn OcpModel>,
}

impl OcpModel for MayerLift {
    fn dims(&self) -> Dims {
        let d = self.inner.dims();
        Dims { state: d.state + 1, ..d }
    }

    fn running_reward(&self, _t: f64, _x: &[f64], _u: &[f64], _p: &[f64]) -> f64 {
        0.0
    }

    fn vector_field(&self, t: f64, x: &[f64], u: &[f64], p: &[f64]) -> Vec<f64> {
        let xi = &x[1..];
        let mut out = Vec::with_capacity(x.len());
        out.push(self.inner.running_reward(t, xi, u, p));
        out.extend(self.inner.vector_field(t, xi, u, p));
        out
    }

    fn terminal(&self, alpha: usize, x: &[f64], p: &[f64]) -> f64 {
        let g = self.inner.terminal(alpha, &x[1..], p);
        if alpha == 0 {
            x[0] + g
        } else {
            g
        }
    }

    fn equality(&self, beta: usize, x: &[f64], p: &[f64]) -> f64 {
        self.inner.equality(beta, &x[1..], p)
    }

    fn deriv_mode(&self) -> DerivMode {
        self.inner.deriv_mode()
    }

    fn running_reward_partials(&self, _t: f64, x: &[f64], u: &[f64], p: &[f64]) -> ScalarPartials {
        ScalarPartials {
            dt: 0.0,
            dx: vec![0.0; x.len()],
            du: vec![0.0; u.len()],
            dp: vec![0.0; p.len()],
        }
    }

    fn vector_field_partials(&self, t: f64, x: &[f64], u: &[f64], p: &[f64]) -> FieldPartials {
        let xi = &x[1..];
        let n = xi.len();
        let r = self.inner.running_reward_partials(t, xi, u, p);
        let f = self.inner.vector_field_partials(t, xi, u, p);
        let mut dx = DMatrix::zeros(n + 1, n + 1);
        let mut du = DMatrix::zeros(n + 1, u.len());
        let mut dp = DMatrix::zeros(n + 1, p.len());
        for j in 0..n {
            dx[(0, j + 1)] = r.dx[j];
        }
        for j in 0..u.len() {
            du[(0, j)] = r.du[j];
        }
        for j in 0..p.len() {
            dp[(0, j)] = r.dp[j];
        }
        for i in 0..n {
            for j in 0..n {
                dx[(i + 1, j + 1)] = f.dx[(i, j)];
            }
            for j in 0..u.len() {
                du[(i + 1, j)] = f.du[(i, j)];
            }
            for j in 0..p.len() {
                dp[(i + 1, j)] = f.dp[(i, j)];
            }
        }
        let mut dt = vec![r.dt];
        dt.extend(f.dt);
        FieldPartials { dt, dx, du, dp }
    }

    fn terminal_partials(&self, alpha: usize, x: &[f64], p: &[f64]) -> PointPartials {
        let g = self.inner.terminal_partials(alpha, &x[1..], p);
        let mut dx = vec![if alpha == 0 { 1.0 } else { 0.0 }];
        dx.extend(g.dx);
        PointPartials { dx, dp: g.dp }
    }

    fn equality_partials(&self, beta: usize, x: &[f64], p: &[f64]) -> PointPartials {
        let h = self.inner.equality_partials(beta, &x[1..], p);
        let mut dx = vec![0.0];
        dx.extend(h.dx);
        PointPartials { dx, dp: h.dp }
    }

    fn hamiltonian_argmax(&self, t: f64, x: &[f64], _lambda0: f64, adjoint: &[f64], p: &[f64]) -> Option<Vec<f64>> {
        self.inner.hamiltonian_argmax(t, &x[1..], adjoint[0], &adjoint[1..], p)
    }
}

/// Lift of `problem` to Mayer form on the augmented state `(σ, ξ)`.
pub fn augment_to_mayer(problem: &BolzaProblem) -> BolzaProblem {
    let initial = match &problem.initial {
        InitialState::Fixed(v) => {
            let mut w = vec![0.0];
            w.extend(v);
            InitialState::Fixed(w)
        }
        InitialState::Parametric(f) => {
            let f = f.clone();
            InitialState::Parametric(Arc::new(move |p| {
                let mut w = vec![0.0];
                w.extend(f(p));
                w
            }))
        }
    };
    BolzaProblem {
        name: format!("{} (mayer)", problem.name),
        horizon: problem.horizon,
        initial,
        model: Arc::new(MayerLift {
            inner: problem.model.clone(),
        }),
        control_set: problem.control_set.clone(),
        state_guard: problem.state_guard,
        feasibility_tol: problem.feasibility_tol,
        ode: problem.ode,
        quadrature: problem.quadrature,
    }
}

/// The process of the Mayer lift corresponding to `proc`, with
/// `σ(t) = ∫₀ᵗ f⁰ ds`.
pub fn lift_process(problem: &BolzaProblem, proc: &Process) -> Result<Process> {
    check_process_dims(problem, proc)?;
    let (grid, segs) = proc.segments()?;
    let model = problem.model.clone();
    let quad = problem.quadrature;
    let n = problem.dims().state;
    let pi = Arc::new(proc.pi.clone());
    let mut sigma_start = 0.0;
    let mut values: Vec<SegmentFn> = Vec::new();
    let mut derivs: Vec<SegmentFn> = Vec::new();
    for (i, (xs, dxs, us)) in segs.into_iter().enumerate() {
        let (a, b) = grid.segment_bounds(i);
        let running = {
            let (model, pi, xs, us) = (model.clone(), pi.clone(), xs.clone(), us.clone());
            Arc::new(move |t: f64| model.running_reward(t, &xs(t), &us(t), &pi))
        };
        let base = sigma_start;
        {
            let (xs, running) = (xs.clone(), running.clone());
            values.push(Arc::new(move |t| {
                let s = base + integrate_scalar(|r| running(r), a, t.max(a), &quad).unwrap_or(f64::NAN);
                let mut v = Vec::with_capacity(n + 1);
                v.push(s);
                v.extend(xs(t));
                v
            }));
        }
        {
            let running = running.clone();
            derivs.push(Arc::new(move |t| {
                let mut v = Vec::with_capacity(n + 1);
                v.push(running(t));
                v.extend(dxs(t));
                v
            }));
        }
        sigma_start += integrate_scalar(|r| running(r), a, b, &quad)?;
    }
    let x = PiecewiseC1Fn::new(grid.clone(), n + 1, values, derivs)?;
    Ok(Process {
        x,
        u: proc.u.on_grid(&grid)?,
        pi: proc.pi.clone(),
    })
}
