use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::multipliers::{numerical_rank, singular_values, terminal_data};
use crate::error::Result;
use crate::problem::{BolzaProblem, Process};

/// Constraint `gᵅ` counts as active when `|gᵅ(x(T), π)|` is below this.
pub const ACTIVE_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum QualificationMode {
    #[serde(rename = "QC0")]
    Qc0,
    #[serde(rename = "QC1")]
    Qc1,
    #[serde(rename = "LI")]
    Li,
}

impl QualificationMode {
    pub const ALL: [QualificationMode; 3] = [QualificationMode::Qc0, QualificationMode::Qc1, QualificationMode::Li];
}

#[derive(Debug, Clone, Serialize)]
pub struct QualificationReport {
    pub mode: QualificationMode,
    pub passed: bool,
    /// Indices `α` of the terminal functions entering the family.
    pub family: Vec<usize>,
    pub singular_values: Vec<f64>,
    pub rank: usize,
    pub required: usize,
    /// Smallest `‖Σ cᵅ P⊥Dgᵅ‖` over `c ≥ 0`, `Σ c = 1`, with `P⊥` the projector
    /// killing the equality gradients.
    pub nnls_residual: Option<f64>,
    pub detail: String,
}

/// Lawson–Hanson nonnegative least squares `min ‖A c − b‖`, `c ≥ 0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let tol = 1e-12 * a.norm().max(1.0);
    for _ in 0..(3 * n + 10) {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..n).filter(|&j| !passive[j] && w[j] > tol).max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate else { break };
        passive[j] = true;
        loop {
            let idx: Vec<usize> = (0..n).filter(|&k| passive[k]).collect();
            let sub = a.select_columns(&idx);
            let z_sub = match sub.clone().svd(true, true).solve(b, 1e-14) {
                Ok(z) => z,
                Err(_) => return x,
            };
            if z_sub.iter().all(|v| *v > 0.0) {
                x.fill(0.0);
                for (k, &col) in idx.iter().enumerate() {
                    x[col] = z_sub[k];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (k, &col) in idx.iter().enumerate() {
                if z_sub[k] <= 0.0 {
                    alpha = alpha.min(x[col] / (x[col] - z_sub[k]));
                }
            }
            for (k, &col) in idx.iter().enumerate() {
                x[col] += alpha * (z_sub[k] - x[col]);
                if x[col] <= 1e-15 {
                    x[col] = 0.0;
                    passive[col] = false;
                }
            }
        }
    }
    x
}

/// Checks `(QC,0)`, `(QC,1)` or `(LI)` at the terminal point of `proc`.
pub fn check_qualification(problem: &BolzaProblem, proc: &Process, mode: QualificationMode) -> Result<QualificationReport> {
    let d = problem.dims();
    let data = terminal_data(problem, proc)?;
    if mode == QualificationMode::Li {
        let family = data.li_family();
        let sv = singular_values(&family);
        let rank = numerical_rank(&sv);
        let required = d.inequalities + d.equalities;
        return Ok(QualificationReport {
            mode,
            passed: rank == required,
            family: (1..=d.inequalities).collect(),
            detail: format!("rank {rank} of {required} composed terminal covectors"),
            singular_values: sv,
            rank,
            required,
            nnls_residual: None,
        });
    }
    let start = if mode == QualificationMode::Qc0 { 0 } else { 1 };
    let active: Vec<usize> = (start..=d.inequalities)
        .filter(|&a| a == 0 || data.g_val[a].abs() <= ACTIVE_TOL)
        .collect();
    let n = d.state;
    let h = if data.h_dx.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&data.h_dx.iter().map(|v| DVector::from_column_slice(v)).collect::<Vec<_>>())
    };
    let sv = singular_values(&h);
    let rank = numerical_rank(&sv);
    let required = d.equalities;
    if rank < required {
        return Ok(QualificationReport {
            mode,
            passed: false,
            family: active,
            detail: "equality gradients are linearly dependent".into(),
            singular_values: sv,
            rank,
            required,
            nnls_residual: None,
        });
    }
    if active.is_empty() {
        return Ok(QualificationReport {
            mode,
            passed: true,
            family: active,
            detail: "no active inequality gradients; equality gradients free".into(),
            singular_values: sv,
            rank,
            required,
            nnls_residual: None,
        });
    }
    let projector = if required == 0 {
        DMatrix::identity(n, n)
    } else {
        let pinv = h.clone().pseudo_inverse(1e-14).expect("pseudo-inverse of a full-rank matrix");
        DMatrix::identity(n, n) - &h * pinv
    };
    let g = DMatrix::from_columns(
        &active
            .iter()
            .map(|&a| &projector * DVector::from_column_slice(&data.g_dx[a]))
            .collect::<Vec<_>>(),
    );
    let scale = g.norm().max(1.0);
    // Σ c = 1 enforced by a heavily weighted extra row.
    let weight = 1e4 * scale;
    let mut aug = DMatrix::zeros(n + 1, active.len());
    aug.view_mut((0, 0), (n, active.len())).copy_from(&g);
    aug.row_mut(n).fill(weight);
    let mut rhs = DVector::zeros(n + 1);
    rhs[n] = weight;
    let c = nnls(&aug, &rhs);
    let residual = (&g * &c).norm() / c.sum().max(f64::MIN_POSITIVE);
    let passed = residual > 1e-8 * scale;
    Ok(QualificationReport {
        mode,
        passed,
        detail: if passed {
            "only the trivial nonnegative combination vanishes".into()
        } else {
            format!("nonnegative combination {:?} annihilates the family", c.as_slice())
        },
        family: active,
        singular_values: sv,
        rank,
        required,
        nnls_residual: Some(residual),
    })
}

/// Times on a uniform grid where `D₃f(t, x(t), u(t))` has full row rank,
/// i.e. candidates for the surjectivity condition used to normalize `λ₀`.
pub fn surjectivity_scan(problem: &BolzaProblem, proc: &Process, samples: usize) -> Vec<(f64, usize)> {
    let n = problem.dims().state;
    let t_end = problem.horizon;
    (0..=samples)
        .map(|k| t_end * k as f64 / samples.max(1) as f64)
        .map(|t| {
            let du = problem
                .model
                .vector_field_partials(t, &proc.x.value_at(t), &proc.u.value_at(t), &proc.pi)
                .du;
            (t, numerical_rank(&singular_values(&du)))
        })
        .filter(|(_, r)| *r == n)
        .collect()
}
