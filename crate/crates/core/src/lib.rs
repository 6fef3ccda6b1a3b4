//! Verification of Pontryagin-type necessary conditions and envelope-formula
//! sensitivities for parameterized optimal control problems with terminal
//! constraints.
//!
//! Problems are maximizations over piecewise-continuous controls with state
//! dynamics `x' = f(t, x, u, π)`, a running reward `f⁰`, a terminal reward
//! `g⁰`, terminal inequalities `gᵅ ≥ 0` and terminal equalities `hᵝ = 0`.

pub mod builtins;
pub mod config;
pub mod envelope;
pub mod error;
pub mod exprdiff;
pub mod flow;
pub mod ode;
pub mod piecewise;
pub mod pmp;
pub mod problem;
pub mod quadrature;

pub use error::{OcError, Result};
pub use piecewise::{Grid, PiecewiseC1Fn, PiecewiseFn, Side};
pub use problem::{BolzaProblem, ControlSet, DerivMode, Dims, OcpModel, Process};
