use std::sync::Arc;

use nalgebra::DMatrix;

use super::expr::{parse, DualEval, Expr, Point, Scope};
use crate::error::{OcError, Result};
use crate::problem::{BolzaProblem, ControlSet, DerivMode, Dims, FieldPartials, OcpModel, PointPartials, ScalarPartials};

/// Expression sources for a problem. `g` lists `g⁰, g¹, …, gᵐ`; an empty
/// list means `g⁰ ≡ 0` and no inequality constraints.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExprSources {
    pub f0: String,
    pub f: Vec<String>,
    pub g: Vec<String>,
    pub h: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExprDims {
    pub state: usize,
    pub control: usize,
    pub param: usize,
}

#[derive(Debug, Clone)]
struct Compiled {
    src: String,
    expr: Expr,
}

impl Compiled {
    fn new(src: &str, scope: &Scope, what: &str) -> Result<Self> {
        let expr = parse(src, scope).map_err(|e| OcError::Config(format!("{what}: {e}")))?;
        Ok(Self {
            src: src.to_string(),
            expr,
        })
    }

    /// Domain faults become NaN here; the integrators and checks downstream
    /// report non-finite values with their own context.
    fn value(&self, at: &Point<'_>) -> f64 {
        self.expr.eval(at, Some(&self.src)).unwrap_or(f64::NAN)
    }

    fn dual(&self, at: &Point<'_>) -> DualEval {
        self.expr.eval_dual(at, Some(&self.src)).unwrap_or_else(|_| DualEval {
            value: f64::NAN,
            grad: vec![f64::NAN; at.width()],
            one_sided: false,
        })
    }
}

/// A problem model defined by expressions, with partials from dual numbers.
#[derive(Debug, Clone)]
pub struct ExprModel {
    dims: ExprDims,
    f0: Compiled,
    f: Vec<Compiled>,
    g: Vec<Compiled>,
    h: Vec<Compiled>,
}

impl ExprModel {
    pub fn new(src: &ExprSources, dims: ExprDims) -> Result<Self> {
        if dims.state == 0 {
            return Err(OcError::Config("state dimension must be at least 1".into()));
        }
        if src.f.len() != dims.state {
            return Err(OcError::Config(format!(
                "vector field has {} components but the state dimension is {}",
                src.f.len(),
                dims.state
            )));
        }
        let run = Scope::running(dims.state, dims.control, dims.param);
        let term = Scope::terminal(dims.state, dims.param);
        let g = if src.g.is_empty() {
            vec![Compiled::new("0", &term, "g0")?]
        } else {
            src.g
                .iter()
                .enumerate()
                .map(|(i, s)| Compiled::new(s, &term, &format!("g{i}")))
                .collect::<Result<_>>()?
        };
        Ok(Self {
            dims,
            f0: Compiled::new(&src.f0, &run, "f0")?,
            f: src
                .f
                .iter()
                .enumerate()
                .map(|(i, s)| Compiled::new(s, &run, &format!("f{}", i + 1)))
                .collect::<Result<_>>()?,
            g,
            h: src
                .h
                .iter()
                .enumerate()
                .map(|(i, s)| Compiled::new(s, &term, &format!("h{}", i + 1)))
                .collect::<Result<_>>()?,
        })
    }

    /// True when some `abs` was differentiated at zero at this point.
    pub fn one_sided_at(&self, t: f64, x: &[f64], u: &[f64], p: &[f64]) -> bool {
        let at = Point { t, x, u, p };
        let term = Point { t: 0.0, x, u: &[], p };
        self.f.iter().chain(std::iter::once(&self.f0)).any(|c| c.dual(&at).one_sided)
            || self.g.iter().chain(&self.h).any(|c| c.dual(&term).one_sided)
    }

    fn split_running(&self, grad: &[f64]) -> (f64, Vec<f64>, Vec<f64>, Vec<f64>) {
        let (n, mu) = (self.dims.state, self.dims.control);
        (
            grad[0],
            grad[1..1 + n].to_vec(),
            grad[1 + n..1 + n + mu].to_vec(),
            grad[1 + n + mu..].to_vec(),
        )
    }

    fn terminal_point_partials(&self, c: &Compiled, x: &[f64], p: &[f64]) -> PointPartials {
        let d = c.dual(&Point { t: 0.0, x, u: &[], p });
        let n = self.dims.state;
        PointPartials {
            dx: d.grad[1..1 + n].to_vec(),
            dp: d.grad[1 + n..].to_vec(),
        }
    }
}

impl OcpModel for ExprModel {
    fn dims(&self) -> Dims {
        Dims {
            state: self.dims.state,
            control: self.dims.control,
            param: self.dims.param,
            inequalities: self.g.len() - 1,
            equalities: self.h.len(),
        }
    }

    fn running_reward(&self, t: f64, x: &[f64], u: &[f64], p: &[f64]) -> f64 {
        self.f0.value(&Point { t, x, u, p })
    }

    fn vector_field(&self, t: f64, x: &[f64], u: &[f64], p: &[f64]) -> Vec<f64> {
        let at = Point { t, x, u, p };
        self.f.iter().map(|c| c.value(&at)).collect()
    }

    fn terminal(&self, alpha: usize, x: &[f64], p: &[f64]) -> f64 {
        self.g[alpha].value(&Point { t: 0.0, x, u: &[], p })
    }

    fn equality(&self, beta: usize, x: &[f64], p: &[f64]) -> f64 {
        self.h[beta].value(&Point { t: 0.0, x, u: &[], p })
    }

    fn deriv_mode(&self) -> DerivMode {
        DerivMode::DualAd
    }

    fn running_reward_partials(&self, t: f64, x: &[f64], u: &[f64], p: &[f64]) -> ScalarPartials {
        let d = self.f0.dual(&Point { t, x, u, p });
        let (dt, dx, du, dp) = self.split_running(&d.grad);
        ScalarPartials { dt, dx, du, dp }
    }

    fn vector_field_partials(&self, t: f64, x: &[f64], u: &[f64], p: &[f64]) -> FieldPartials {
        let at = Point { t, x, u, p };
        let (n, mu, np) = (self.dims.state, self.dims.control, self.dims.param);
        let mut out = FieldPartials {
            dt: vec![0.0; n],
            dx: DMatrix::zeros(n, n),
            du: DMatrix::zeros(n, mu),
            dp: DMatrix::zeros(n, np),
        };
        for (i, c) in self.f.iter().enumerate() {
            let (dt, dx, du, dp) = self.split_running(&c.dual(&at).grad);
            out.dt[i] = dt;
            out.dx.row_mut(i).copy_from_slice(&dx);
            out.du.row_mut(i).copy_from_slice(&du);
            out.dp.row_mut(i).copy_from_slice(&dp);
        }
        out
    }

    fn terminal_partials(&self, alpha: usize, x: &[f64], p: &[f64]) -> PointPartials {
        self.terminal_point_partials(&self.g[alpha], x, p)
    }

    fn equality_partials(&self, beta: usize, x: &[f64], p: &[f64]) -> PointPartials {
        self.terminal_point_partials(&self.h[beta], x, p)
    }
}

/// The same expressions with partials by central differences.
#[derive(Debug, Clone)]
pub struct FdExprModel(pub ExprModel);

impl OcpModel for FdExprModel {
    fn dims(&self) -> Dims {
        self.0.dims()
    }
    fn running_reward(&self, t: f64, x: &[f64], u: &[f64], p: &[f64]) -> f64 {
        self.0.running_reward(t, x, u, p)
    }
    fn vector_field(&self, t: f64, x: &[f64], u: &[f64], p: &[f64]) -> Vec<f64> {
        self.0.vector_field(t, x, u, p)
    }
    fn terminal(&self, alpha: usize, x: &[f64], p: &[f64]) -> f64 {
        self.0.terminal(alpha, x, p)
    }
    fn equality(&self, beta: usize, x: &[f64], p: &[f64]) -> f64 {
        self.0.equality(beta, x, p)
    }
}

/// Compiles expression sources into a problem. `deriv_mode` selects dual
/// numbers (`DualAd`, also used for `Analytic`) or central differences.
pub fn bind_problem(
    name: &str,
    src: &ExprSources,
    dims: ExprDims,
    horizon: f64,
    xi0: Vec<f64>,
    control_set: ControlSet,
    deriv_mode: DerivMode,
) -> Result<BolzaProblem> {
    if xi0.len() != dims.state {
        return Err(OcError::Config(format!(
            "xi0 has {} entries but the state dimension is {}",
            xi0.len(),
            dims.state
        )));
    }
    if let ControlSet::Box { lower, upper } = &control_set {
        if lower.len() != dims.control || upper.len() != dims.control {
            return Err(OcError::Config(format!(
                "control box bounds must have {} entries",
                dims.control
            )));
        }
    }
    let model = ExprModel::new(src, dims)?;
    let model: Arc<dyn OcpModel> = if deriv_mode == DerivMode::CentralFd {
        Arc::new(FdExprModel(model))
    } else {
        Arc::new(model)
    };
    BolzaProblem::new(name, horizon, xi0, model, control_set).map_err(|e| match e {
        OcError::Config(_) => e,
        other => OcError::Config(other.to_string()),
    })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::builtins::Steering;

    fn steering_src() -> ExprSources {
        ExprSources {
            f0: "-(u1^2)/2".into(),
            f: vec!["u1".into()],
            g: vec![],
            h: vec!["x1 - p1".into()],
        }
    }

    const DIMS: ExprDims = ExprDims {
        state: 1,
        control: 1,
        param: 1,
    };

    #[test]
    fn steering_matches_builtin() {
        let m = ExprModel::new(&steering_src(), DIMS).unwrap();
        assert_eq!(m.dims(), Steering.dims());
        let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
        for _ in 0..100 {
            let (t, x, u, p) = (
                rng.random_range(0.0..=1.0),
                [rng.random_range(-3.0..=3.0)],
                [rng.random_range(-3.0..=3.0)],
                [rng.random_range(-3.0..=3.0)],
            );
            let close = |a: f64, b: f64| assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            close(m.running_reward(t, &x, &u, &p), Steering.running_reward(t, &x, &u, &p));
            close(m.vector_field(t, &x, &u, &p)[0], Steering.vector_field(t, &x, &u, &p)[0]);
            close(m.terminal(0, &x, &p), Steering.terminal(0, &x, &p));
            close(m.equality(0, &x, &p), Steering.equality(0, &x, &p));
            let (a, b) = (m.running_reward_partials(t, &x, &u, &p), Steering.running_reward_partials(t, &x, &u, &p));
            close(a.du[0], b.du[0]);
            close(a.dx[0], b.dx[0]);
            let (a, b) = (m.equality_partials(0, &x, &p), Steering.equality_partials(0, &x, &p));
            close(a.dx[0], b.dx[0]);
            close(a.dp[0], b.dp[0]);
            let (a, b) = (m.vector_field_partials(t, &x, &u, &p), Steering.vector_field_partials(t, &x, &u, &p));
            close(a.du[(0, 0)], b.du[(0, 0)]);
        }
    }

    #[test]
    fn empty_g_list_gives_m_zero() {
        let p = bind_problem("s", &steering_src(), DIMS, 1.0, vec![0.0], ControlSet::open(), DerivMode::DualAd).unwrap();
        assert_eq!(p.dims().inequalities, 0);
        assert_eq!(p.model.terminal(0, &[2.0], &[1.0]), 0.0);
    }

    #[test]
    fn configuration_errors() {
        let mut src = steering_src();
        src.f0 = "-(u2^2)/2".into();
        assert!(matches!(ExprModel::new(&src, DIMS), Err(OcError::Config(_))));
        let mut src = steering_src();
        src.f.push("x1".into());
        assert!(matches!(ExprModel::new(&src, DIMS), Err(OcError::Config(_))));
        let mut src = steering_src();
        src.h = vec!["u1 - p1".into()];
        assert!(matches!(ExprModel::new(&src, DIMS), Err(OcError::Config(_))));
        let r = bind_problem("s", &steering_src(), DIMS, 1.0, vec![0.0, 1.0], ControlSet::open(), DerivMode::DualAd);
        assert!(matches!(r, Err(OcError::Config(_))));
    }

    #[test]
    fn time_partials_synthesized() {
        let src = ExprSources {
            f0: "sin(t)*x1".into(),
            f: vec!["t*u1".into()],
            ..ExprSources::default()
        };
        let m = ExprModel::new(&src, ExprDims { param: 0, ..DIMS }).unwrap();
        let r = m.running_reward_partials(0.0, &[2.0], &[1.0], &[]);
        assert_eq!(r.dt, 2.0);
        assert_eq!(m.vector_field_partials(0.5, &[2.0], &[3.0], &[]).dt, vec![3.0]);
    }
}
