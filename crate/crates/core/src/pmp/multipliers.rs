use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{OcError, Result};
use crate::problem::{check_process_dims, BolzaProblem, Process};

/// Relative singular-value threshold of every rank test.
pub const RANK_TOL: f64 = 1e-8;
/// Default tolerance of the multiplier solve.
pub const MULTIPLIER_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// `λ₀ = 1` from the linearly free terminal family.
    Normalized,
    /// `‖(λ, μ)‖₁ = 1` from the null space of the terminal stationarity map.
    Sphere,
    /// Supplied by the caller.
    Supplied,
}

/// `λ = (λ₀ … λ_m)` and `μ = (μ₁ … μ_q)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Multipliers {
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub normalized: bool,
    pub regime: Regime,
    /// Set when the sphere route found a null space of dimension above one,
    /// so the multipliers are not determined.
    pub degenerate: bool,
}

impl Multipliers {
    pub fn new(lambda: Vec<f64>, mu: Vec<f64>) -> Self {
        let normalized = lambda.first() == Some(&1.0);
        Self {
            lambda,
            mu,
            normalized,
            regime: Regime::Supplied,
            degenerate: false,
        }
    }

    pub fn lambda0(&self) -> f64 {
        self.lambda[0]
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            lambda: self.lambda.iter().map(|v| c * v).collect(),
            mu: self.mu.iter().map(|v| c * v).collect(),
            normalized: self.normalized && c == 1.0,
            ..self.clone()
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.lambda.iter().chain(&self.mu).fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Terminal data entering the multiplier computations, all at
/// `(T, x(T), u(T), π)`.
pub(crate) struct TerminalData {
    /// `D₃f(T)`, `n × c`.
    pub field_du: DMatrix<f64>,
    /// `D₃f⁰(T)`.
    pub reward_du: Vec<f64>,
    /// `D₁gᵅ` for `α = 0 ..= m`.
    pub g_dx: Vec<Vec<f64>>,
    pub g_val: Vec<f64>,
    /// `D₁h^β`.
    pub h_dx: Vec<Vec<f64>>,
}

pub(crate) fn terminal_data(problem: &BolzaProblem, proc: &Process) -> Result<TerminalData> {
    check_process_dims(problem, proc)?;
    let d = problem.dims();
    let m = &problem.model;
    let t = problem.horizon;
    let (x, u) = (proc.terminal_state(), proc.terminal_control());
    let f = m.vector_field_partials(t, &x, &u, &proc.pi);
    let r = m.running_reward_partials(t, &x, &u, &proc.pi);
    Ok(TerminalData {
        field_du: f.du,
        reward_du: r.du,
        g_dx: (0..=d.inequalities).map(|a| m.terminal_partials(a, &x, &proc.pi).dx).collect(),
        g_val: (0..=d.inequalities).map(|a| m.terminal(a, &x, &proc.pi)).collect(),
        h_dx: (0..d.equalities).map(|b| m.equality_partials(b, &x, &proc.pi).dx).collect(),
    })
}

impl TerminalData {
    /// `D₁φ ∘ D₃f(T)` as a control covector.
    pub fn compose(&self, grad: &[f64]) -> DVector<f64> {
        self.field_du.transpose() * DVector::from_column_slice(grad)
    }

    /// Columns `e_i = D₁gⁱ∘D₃f` (`i = 1..m`) then `e_{m+j} = D₁hʲ∘D₃f`.
    pub fn li_family(&self) -> DMatrix<f64> {
        let cols: Vec<DVector<f64>> = self.g_dx[1..].iter().chain(&self.h_dx).map(|g| self.compose(g)).collect();
        if cols.is_empty() {
            DMatrix::zeros(self.field_du.ncols(), 0)
        } else {
            DMatrix::from_columns(&cols)
        }
    }
}

pub(crate) fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.ncols() == 0 || a.nrows() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

pub(crate) fn numerical_rank(sv: &[f64]) -> usize {
    let top = sv.first().copied().unwrap_or(0.0);
    sv.iter().filter(|s| **s > RANK_TOL * top && **s > 0.0).count()
}

/// Multipliers with `λ₀ = 1` from the terminal stationarity system
/// `Σ λᵢ eᵢ + Σ μⱼ e_{m+j} = −D₁g⁰∘D₃f − D₃f⁰`, solved in the least-squares
/// sense; requires the family `(eᵢ)` to be linearly free.
pub fn solve_multipliers_li(problem: &BolzaProblem, proc: &Process) -> Result<Multipliers> {
    solve_multipliers_li_with(problem, proc, MULTIPLIER_TOL)
}

pub fn solve_multipliers_li_with(problem: &BolzaProblem, proc: &Process, tol: f64) -> Result<Multipliers> {
    let (mut mult, residual, rhs_norm) = li_least_squares(problem, proc)?;
    let allowed = tol * (1.0 + rhs_norm);
    if !(residual <= allowed) {
        return Err(OcError::Stationarity { residual, allowed });
    }
    if let Some((i, v)) = mult.lambda.iter().enumerate().skip(1).find(|(_, v)| **v < -tol) {
        return Err(OcError::SignCondition { index: i, value: *v });
    }
    // Tiny negative round-off is clipped so the sign condition holds exactly.
    mult.lambda.iter_mut().for_each(|v| *v = v.max(0.0));
    Ok(mult)
}

/// Least-squares solution of the normalized system without the residual and
/// sign checks, with the residual and `‖rhs‖`.
pub(crate) fn li_least_squares(problem: &BolzaProblem, proc: &Process) -> Result<(Multipliers, f64, f64)> {
    let d = problem.dims();
    let data = terminal_data(problem, proc)?;
    let family = data.li_family();
    let required = d.inequalities + d.equalities;
    let sv = singular_values(&family);
    let rank = numerical_rank(&sv);
    if rank < required {
        return Err(OcError::LiViolated {
            rank,
            required,
            singular_values: sv,
        });
    }
    let rhs = -(data.compose(&data.g_dx[0]) + DVector::from_column_slice(&data.reward_du));
    let coeffs = if required == 0 {
        DVector::zeros(0)
    } else {
        family
            .clone()
            .svd(true, true)
            .solve(&rhs, 0.0)
            .map_err(|e| OcError::Unsupported(format!("least-squares solve failed: {e}")))?
    };
    let residual = (&family * &coeffs - &rhs).norm();
    let mut lambda = vec![1.0];
    lambda.extend(coeffs.iter().take(d.inequalities));
    let mult = Multipliers {
        lambda,
        mu: coeffs.iter().skip(d.inequalities).copied().collect(),
        normalized: true,
        regime: Regime::Normalized,
        degenerate: false,
    };
    Ok((mult, residual, rhs.norm()))
}

/// Unit-`ℓ¹` multipliers spanning the null space of the terminal stationarity
/// map `(λ₀, λ, μ) ↦ λ₀(D₁g⁰∘D₃f + D₃f⁰) + Σ λᵢ eᵢ + Σ μⱼ e_{m+j}`; the first
/// nonzero entry is made positive.
pub fn solve_multipliers_sphere(problem: &BolzaProblem, proc: &Process) -> Result<Multipliers> {
    let d = problem.dims();
    let data = terminal_data(problem, proc)?;
    let lead = data.compose(&data.g_dx[0]) + DVector::from_column_slice(&data.reward_du);
    let family = data.li_family();
    let k = 1 + family.ncols();
    let mut a = DMatrix::zeros(lead.len(), k);
    a.set_column(0, &lead);
    for j in 0..family.ncols() {
        a.set_column(j + 1, &family.column(j));
    }
    let gram = a.transpose() * &a;
    let eig = SymmetricEigen::new(gram);
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (RANK_TOL * RANK_TOL * top).max(1e-300);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]).then(i.cmp(&j)));
    let null_dim = order.iter().filter(|&&i| eig.eigenvalues[i] <= floor).count();
    let mut v: Vec<f64> = eig.eigenvectors.column(order[0]).iter().copied().collect();
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    v.iter_mut().for_each(|x| *x /= l1);
    v.iter_mut().for_each(|x| {
        if x.abs() < 1e-15 {
            *x = 0.0;
        }
    });
    if let Some(first) = v.iter().find(|x| **x != 0.0).copied() {
        if first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
    let lambda = v[..1 + d.inequalities].to_vec();
    let mu = v[1 + d.inequalities..].to_vec();
    Ok(Multipliers {
        lambda,
        mu,
        normalized: false,
        regime: Regime::Sphere,
        degenerate: null_dim > 1,
    })
}

/// The normalized route when the terminal family is linearly free, the
/// sphere route otherwise.
pub fn compute_multipliers(problem: &BolzaProblem, proc: &Process) -> Result<Multipliers> {
    match solve_multipliers_li(problem, proc) {
        Ok(m) => Ok(m),
        Err(OcError::LiViolated { .. }) => solve_multipliers_sphere(problem, proc),
        Err(e) => Err(e),
    }
}

/// `Σ λ_α D₁gᵅ + Σ μ_β D₁h^β`, the terminal adjoint fixed by transversality.
pub fn transversality_covector(problem: &BolzaProblem, proc: &Process, mult: &Multipliers) -> Result<Vec<f64>> {
    let d = problem.dims();
    if mult.lambda.len() != d.inequalities + 1 {
        return Err(OcError::dim("λ multipliers", d.inequalities + 1, mult.lambda.len()));
    }
    if mult.mu.len() != d.equalities {
        return Err(OcError::dim("μ multipliers", d.equalities, mult.mu.len()));
    }
    let data = terminal_data(problem, proc)?;
    let mut out = vec![0.0; d.state];
    for (l, g) in mult.lambda.iter().zip(&data.g_dx).chain(mult.mu.iter().zip(&data.h_dx)) {
        for (o, v) in out.iter_mut().zip(g) {
            *o += l * v;
        }
    }
    Ok(out)
}
