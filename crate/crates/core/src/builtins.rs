//! Hand-coded reference problems with analytic derivatives and known optima.
//!
//! * `lq_scalar`: maximize `∫₀¹ −½(x² + u²) − π x dt`, `x' = u`, `x(0) = 1`.
//! * `steering`: maximize `∫₀¹ −½u² dt`, `x' = u`, `x(0) = 0`, `x(1) = π`.
//! * `constant_drift`: maximize `∫₀¹ −½u² dt + x(1)`, `x' = π`, `x(0) = 0`.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{OcError, Result};
use crate::piecewise::{PiecewiseC1Fn, PiecewiseFn};
use crate::problem::{
    BolzaProblem, ControlSet, DerivMode, Dims, FieldPartials, OcpModel, PointPartials, Process, ScalarPartials,
};

pub const BUILTIN_NAMES: [&str; 3] = ["lq_scalar", "steering", "constant_drift"];

/// Scalar linear-quadratic regulator `x' = u` with reward
/// `−½(x² + u²) − weight·π·x`.
#[derive(Debug, Clone, Copy)]
pub struct LqScalar {
    pub param_weight: f64,
}

impl OcpModel for LqScalar {
    fn dims(&self) -> Dims {
        Dims {
            state: 1,
            control: 1,
            param: 1,
            inequalities: 0,
            equalities: 0,
        }
    }

    fn running_reward(&self, _t: f64, x: &[f64], u: &[f64], p: &[f64]) -> f64 {
        -0.5 * (x[0] * x[0] + u[0] * u[0]) - self.param_weight * p[0] * x[0]
    }

    fn vector_field(&self, _t: f64, _x: &[f64], u: &[f64], _p: &[f64]) -> Vec<f64> {
        vec![u[0]]
    }

    fn terminal(&self, _alpha: usize, _x: &[f64], _p: &[f64]) -> f64 {
        0.0
    }

    fn equality(&self, _beta: usize, _x: &[f64], _p: &[f64]) -> f64 {
        0.0
    }

    fn deriv_mode(&self) -> DerivMode {
        DerivMode::Analytic
    }

    fn running_reward_partials(&self, _t: f64, x: &[f64], u: &[f64], p: &[f64]) -> ScalarPartials {
        ScalarPartials {
            dt: 0.0,
            dx: vec![-x[0] - self.param_weight * p[0]],
            du: vec![-u[0]],
            dp: vec![-self.param_weight * x[0]],
        }
    }

    fn vector_field_partials(&self, _t: f64, _x: &[f64], _u: &[f64], _p: &[f64]) -> FieldPartials {
        FieldPartials {
            dt: vec![0.0],
            dx: DMatrix::zeros(1, 1),
            du: DMatrix::from_element(1, 1, 1.0),
            dp: DMatrix::zeros(1, 1),
        }
    }

    fn terminal_partials(&self, _alpha: usize, _x: &[f64], _p: &[f64]) -> PointPartials {
        PointPartials {
            dx: vec![0.0],
            dp: vec![0.0],
        }
    }

    fn hamiltonian_argmax(&self, _t: f64, _x: &[f64], lambda0: f64, adjoint: &[f64], _p: &[f64]) -> Option<Vec<f64>> {
        (lambda0 > 0.0).then(|| vec![adjoint[0] / lambda0])
    }
}

/// Minimum-energy steering `x' = u` to the target `x(T) = π`.
#[derive(Debug, Clone, Copy)]
pub struct Steering;

impl OcpModel for Steering {
    fn dims(&self) -> Dims {
        Dims {
            state: 1,
            control: 1,
            param: 1,
            inequalities: 0,
            equalities: 1,
        }
    }

    fn running_reward(&self, _t: f64, _x: &[f64], u: &[f64], _p: &[f64]) -> f64 {
        -0.5 * u[0] * u[0]
    }

    fn vector_field(&self, _t: f64, _x: &[f64], u: &[f64], _p: &[f64]) -> Vec<f64> {
        vec![u[0]]
    }

    fn terminal(&self, _alpha: usize, _x: &[f64], _p: &[f64]) -> f64 {
        0.0
    }

    fn equality(&self, _beta: usize, x: &[f64], p: &[f64]) -> f64 {
        x[0] - p[0]
    }

    fn deriv_mode(&self) -> DerivMode {
        DerivMode::Analytic
    }

    fn running_reward_partials(&self, _t: f64, _x: &[f64], u: &[f64], _p: &[f64]) -> ScalarPartials {
        ScalarPartials {
            dt: 0.0,
            dx: vec![0.0],
            du: vec![-u[0]],
            dp: vec![0.0],
        }
    }

    fn vector_field_partials(&self, _t: f64, _x: &[f64], _u: &[f64], _p: &[f64]) -> FieldPartials {
        FieldPartials {
            dt: vec![0.0],
            dx: DMatrix::zeros(1, 1),
            du: DMatrix::from_element(1, 1, 1.0),
            dp: DMatrix::zeros(1, 1),
        }
    }

    fn terminal_partials(&self, _alpha: usize, _x: &[f64], _p: &[f64]) -> PointPartials {
        PointPartials {
            dx: vec![0.0],
            dp: vec![0.0],
        }
    }

    fn equality_partials(&self, _beta: usize, _x: &[f64], _p: &[f64]) -> PointPartials {
        PointPartials {
            dx: vec![1.0],
            dp: vec![-1.0],
        }
    }

    fn hamiltonian_argmax(&self, _t: f64, _x: &[f64], lambda0: f64, adjoint: &[f64], _p: &[f64]) -> Option<Vec<f64>> {
        (lambda0 > 0.0).then(|| vec![adjoint[0] / lambda0])
    }
}

/// Control-independent drift `x' = π` with reward `−½u²` and terminal reward `x(T)`.
#[derive(Debug, Clone, Copy)]
pub struct ConstantDrift;

impl OcpModel for ConstantDrift {
    fn dims(&self) -> Dims {
        Dims {
            state: 1,
            control: 1,
            param: 1,
            inequalities: 0,
            equalities: 0,
        }
    }

    fn running_reward(&self, _t: f64, _x: &[f64], u: &[f64], _p: &[f64]) -> f64 {
        -0.5 * u[0] * u[0]
    }

    fn vector_field(&self, _t: f64, _x: &[f64], _u: &[f64], p: &[f64]) -> Vec<f64> {
        vec![p[0]]
    }

    fn terminal(&self, _alpha: usize, x: &[f64], _p: &[f64]) -> f64 {
        x[0]
    }

    fn equality(&self, _beta: usize, _x: &[f64], _p: &[f64]) -> f64 {
        0.0
    }

    fn deriv_mode(&self) -> DerivMode {
        DerivMode::Analytic
    }

    fn running_reward_partials(&self, _t: f64, _x: &[f64], u: &[f64], _p: &[f64]) -> ScalarPartials {
        ScalarPartials {
            dt: 0.0,
            dx: vec![0.0],
            du: vec![-u[0]],
            dp: vec![0.0],
        }
    }

    fn vector_field_partials(&self, _t: f64, _x: &[f64], _u: &[f64], _p: &[f64]) -> FieldPartials {
        FieldPartials {
            dt: vec![0.0],
            dx: DMatrix::zeros(1, 1),
            du: DMatrix::zeros(1, 1),
            dp: DMatrix::from_element(1, 1, 1.0),
        }
    }

    fn terminal_partials(&self, _alpha: usize, _x: &[f64], _p: &[f64]) -> PointPartials {
        PointPartials {
            dx: vec![1.0],
            dp: vec![0.0],
        }
    }

    fn hamiltonian_argmax(&self, _t: f64, _x: &[f64], lambda0: f64, _adjoint: &[f64], _p: &[f64]) -> Option<Vec<f64>> {
        (lambda0 > 0.0).then(|| vec![0.0])
    }
}

pub fn lq_scalar() -> BolzaProblem {
    BolzaProblem::new("lq_scalar", 1.0, vec![1.0], Arc::new(LqScalar { param_weight: 1.0 }), ControlSet::open())
        .expect("builtin is consistent")
}

/// `lq_scalar` without the parameter in the reward and with `x(0) = π`.
pub fn lq_scaled_initial() -> BolzaProblem {
    BolzaProblem::new(
        "lq_scaled_initial",
        1.0,
        vec![0.0],
        Arc::new(LqScalar { param_weight: 0.0 }),
        ControlSet::open(),
    )
    .and_then(|p| p.with_parametric_initial(Arc::new(|pi| vec![pi[0]])))
    .expect("builtin is consistent")
}

pub fn steering() -> BolzaProblem {
    BolzaProblem::new("steering", 1.0, vec![0.0], Arc::new(Steering), ControlSet::open()).expect("builtin is consistent")
}

pub fn constant_drift() -> BolzaProblem {
    BolzaProblem::new("constant_drift", 1.0, vec![0.0], Arc::new(ConstantDrift), ControlSet::open())
        .expect("builtin is consistent")
}

pub fn by_name(name: &str) -> Result<BolzaProblem> {
    match name {
        "lq_scalar" => Ok(lq_scalar()),
        "steering" => Ok(steering()),
        "constant_drift" => Ok(constant_drift()),
        other => Err(OcError::Config(format!(
            "unknown builtin `{other}` (known: {})",
            BUILTIN_NAMES.join(", ")
        ))),
    }
}

/// Optimal process of the linear-quadratic family: with `y = x + wπ`,
/// `y'' = y`, `y(0) = ξ₀ + wπ`, `y'(T) = 0`.
pub fn lq_scalar_optimum(horizon: f64, xi0: f64, pi: f64, param_weight: f64) -> Result<Process> {
    let shift = param_weight * pi;
    let amp = (xi0 + shift) / horizon.cosh();
    let x = PiecewiseC1Fn::from_fns(
        horizon,
        1,
        move |t| vec![amp * (horizon - t).cosh() - shift],
        move |t| vec![-amp * (horizon - t).sinh()],
    )?;
    let u = PiecewiseFn::from_fn(horizon, 1, move |t| vec![-amp * (horizon - t).sinh()])?;
    Ok(Process::new(x, u, vec![pi]))
}

/// Straight-line steering `u ≡ (π − ξ₀)/T`.
pub fn steering_optimum(horizon: f64, xi0: f64, pi: f64) -> Result<Process> {
    let speed = (pi - xi0) / horizon;
    let x = PiecewiseC1Fn::from_fns(horizon, 1, move |t| vec![xi0 + speed * t], move |_| vec![speed])?;
    let u = PiecewiseFn::constant(horizon, vec![speed])?;
    Ok(Process::new(x, u, vec![pi]))
}

pub fn constant_drift_optimum(horizon: f64, xi0: f64, pi: f64) -> Result<Process> {
    let x = PiecewiseC1Fn::from_fns(horizon, 1, move |t| vec![xi0 + pi * t], move |_| vec![pi])?;
    let u = PiecewiseFn::constant(horizon, vec![0.0])?;
    Ok(Process::new(x, u, vec![pi]))
}

/// Known optimal process of a builtin problem at parameter `pi`.
pub fn reference_process(problem: &BolzaProblem, pi: &[f64]) -> Result<Process> {
    let xi0 = problem.initial_state(pi)[0];
    let t = problem.horizon;
    match problem.name.as_str() {
        "lq_scalar" => lq_scalar_optimum(t, xi0, pi[0], 1.0),
        "lq_scaled_initial" => lq_scalar_optimum(t, xi0, pi[0], 0.0).map(|p| Process { pi: pi.to_vec(), ..p }),
        "steering" => steering_optimum(t, xi0, pi[0]),
        "constant_drift" => constant_drift_optimum(t, xi0, pi[0]),
        other => Err(OcError::Unsupported(format!("no reference solution for `{other}`"))),
    }
}
