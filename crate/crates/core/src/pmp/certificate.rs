use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::adjoint::{adjoint_backward, adjoint_residual, segment_derivative, AdjointPath};
use super::multipliers::{compute_multipliers, li_least_squares, transversality_covector, Multipliers};
use super::qualification::{check_qualification, surjectivity_scan, QualificationMode, QualificationReport, ACTIVE_TOL};
use crate::error::OcError;
use crate::piecewise::{merge_grids, norm, sub, Grid, SegmentFn};
use crate::problem::{BolzaProblem, Process};

/// Grid points per control dimension in the maximum-principle scan.
pub const MP_GRID_POINTS: usize = 64;
/// Local ascents started per sample time.
pub const MP_MULTISTARTS: usize = 8;
/// Sample times per segment for the maximum-principle and `d̲H̄` checks.
pub const TIME_SAMPLES: usize = 8;
/// Full tensor grids are used up to this many control dimensions; above it
/// the scan runs along the coordinate axes through `u₀(t)`.
pub const TENSOR_GRID_MAX_DIM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    NotChecked,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionCheck {
    pub name: &'static str,
    pub residual: f64,
    pub tolerance: f64,
    pub verdict: Verdict,
    /// Time at which the residual is attained, when meaningful.
    pub location: Option<f64>,
    pub note: Option<String>,
}

impl ConditionCheck {
    fn upper(name: &'static str, residual: f64, tolerance: f64, location: Option<f64>) -> Self {
        Self {
            name,
            residual,
            tolerance,
            verdict: if residual <= tolerance { Verdict::Pass } else { Verdict::Fail },
            location,
            note: None,
        }
    }

    fn not_checked(name: &'static str, tolerance: f64, why: String) -> Self {
        Self {
            name,
            residual: f64::NAN,
            tolerance,
            verdict: Verdict::NotChecked,
            location: None,
            note: Some(why),
        }
    }

    fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

/// What the caller provides to [`verify_certificate`]; missing multipliers
/// and adjoint are computed.
#[derive(Debug, Clone)]
pub struct CertificateInputs {
    pub multipliers: Option<Multipliers>,
    pub adjoint: Option<AdjointPath>,
    pub tol: f64,
    pub seed: u64,
    pub check_dh: bool,
}

impl Default for CertificateInputs {
    fn default() -> Self {
        Self {
            multipliers: None,
            adjoint: None,
            tol: 1e-6,
            seed: 0x5EED,
            check_dh: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PmpCertificate {
    pub multipliers: Option<Multipliers>,
    pub multiplier_note: Option<String>,
    pub conditions: Vec<ConditionCheck>,
    pub qualification: Vec<QualificationReport>,
    /// Sample times where `D₃f` is onto.
    pub surjectivity_candidates: Vec<f64>,
    pub adjoint_samples: Vec<(f64, Vec<f64>)>,
    pub tol: f64,
    pub seed: u64,
    #[serde(skip)]
    pub adjoint: Option<AdjointPath>,
}

impl PmpCertificate {
    pub fn condition(&self, name: &str) -> Option<&ConditionCheck> {
        self.conditions.iter().find(|c| c.name == name)
    }

    pub fn verdict(&self, name: &str) -> Verdict {
        self.condition(name).map_or(Verdict::NotChecked, |c| c.verdict)
    }

    pub fn all_pass(&self) -> bool {
        self.conditions.iter().all(|c| c.verdict == Verdict::Pass)
    }

    pub fn degenerate(&self) -> bool {
        self.multipliers.as_ref().is_none_or(|m| m.degenerate)
    }

    /// `0` when every condition passes, `2` on any failure, `3` when nothing
    /// failed but a condition was not checked or the multipliers are degenerate.
    pub fn exit_code(&self) -> i32 {
        if self.conditions.iter().any(|c| c.verdict == Verdict::Fail) {
            2
        } else if self.degenerate() || self.conditions.iter().any(|c| c.verdict == Verdict::NotChecked) {
            3
        } else {
            0
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }
}

/// Multipliers for a certificate: the regular routes first, then the
/// least-squares normalized solution even if stationarity at `T` fails, so
/// the violated conditions show up as verdicts.
fn certificate_multipliers(problem: &BolzaProblem, proc: &Process) -> (Option<Multipliers>, Option<String>) {
    match compute_multipliers(problem, proc) {
        Ok(m) => (Some(m), None),
        Err(e @ (OcError::Stationarity { .. } | OcError::SignCondition { .. })) => match li_least_squares(problem, proc) {
            Ok((m, _, _)) => (Some(m), Some(format!("least-squares multipliers used: {e}"))),
            Err(e) => (None, Some(e.to_string())),
        },
        Err(e) => (None, Some(e.to_string())),
    }
}

struct Along {
    grid: Grid,
    x: Vec<SegmentFn>,
    u: Vec<SegmentFn>,
    p: Vec<SegmentFn>,
}

fn along(proc: &Process, adjoint: &AdjointPath) -> crate::error::Result<Along> {
    let grid = merge_grids(&proc.segments()?.0, adjoint.p.grid())?;
    let x = proc.x.on_grid(&grid)?;
    let u = proc.u.on_grid(&grid)?;
    let p = adjoint.p.on_grid(&grid)?;
    let k = grid.num_segments();
    Ok(Along {
        x: (0..k).map(|i| x.value_segment(i).clone()).collect(),
        u: (0..k).map(|i| u.segment(i).clone()).collect(),
        p: (0..k).map(|i| p.value_segment(i).clone()).collect(),
        grid,
    })
}

fn tensor_grid(lo: &[f64], hi: &[f64], u0: &[f64]) -> Vec<Vec<f64>> {
    let axis = |k: usize, j: usize| lo[k] + (hi[k] - lo[k]) * j as f64 / (MP_GRID_POINTS - 1) as f64;
    let c = lo.len();
    if c <= TENSOR_GRID_MAX_DIM {
        let total = MP_GRID_POINTS.pow(c as u32);
        (0..total)
            .map(|mut idx| {
                (0..c)
                    .map(|k| {
                        let j = idx % MP_GRID_POINTS;
                        idx /= MP_GRID_POINTS;
                        axis(k, j)
                    })
                    .collect()
            })
            .collect()
    } else {
        (0..c)
            .flat_map(|k| {
                (0..MP_GRID_POINTS).map(move |j| {
                    let mut z = u0.to_vec();
                    z[k] = axis(k, j);
                    z
                })
            })
            .collect()
    }
}

/// Projected gradient ascent of `ζ ↦ H(ζ)` inside `[lo, hi]` with
/// backtracking; returns the best point found.
fn local_ascent(h: &dyn Fn(&[f64]) -> f64, grad: &dyn Fn(&[f64]) -> Vec<f64>, start: Vec<f64>, lo: &[f64], hi: &[f64]) -> (Vec<f64>, f64) {
    let clamp = |z: Vec<f64>| -> Vec<f64> { z.iter().zip(lo.iter().zip(hi)).map(|(v, (a, b))| v.clamp(*a, *b)).collect() };
    let mut z = clamp(start);
    let mut hz = h(&z);
    let mut step = 1.0;
    for _ in 0..60 {
        let g = grad(&z);
        if norm(&g) < 1e-13 {
            break;
        }
        let mut improved = false;
        for _ in 0..40 {
            let trial = clamp(z.iter().zip(&g).map(|(a, b)| a + step * b).collect());
            let ht = h(&trial);
            if ht > hz {
                z = trial;
                hz = ht;
                improved = true;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (z, hz)
}

/// Verifies the conclusions of the maximum principle along `proc`.
///
/// The maximum condition is tested on a deterministic grid plus seeded local
/// ascents; a pass means no counterexample was found.
pub fn verify_certificate(problem: &BolzaProblem, proc: &Process, inputs: &CertificateInputs) -> PmpCertificate {
    let tol = inputs.tol;
    let d = problem.dims();
    let qualification: Vec<QualificationReport> = QualificationMode::ALL
        .iter()
        .filter_map(|m| check_qualification(problem, proc, *m).ok())
        .collect();
    let surjectivity_candidates = surjectivity_scan(problem, proc, 32).into_iter().map(|(t, _)| t).collect();
    let (multipliers, multiplier_note) = match &inputs.multipliers {
        Some(m) => (Some(m.clone()), None),
        None => certificate_multipliers(problem, proc),
    };
    let names = ["NN", "Si", "Sl", "TC", "AE", "MP", "CH", "dH"];
    let Some(mult) = multipliers.clone() else {
        let why = multiplier_note.clone().unwrap_or_else(|| "no multipliers".into());
        return PmpCertificate {
            multipliers: None,
            multiplier_note,
            conditions: names.iter().map(|n| ConditionCheck::not_checked(n, tol, why.clone())).collect(),
            qualification,
            surjectivity_candidates,
            adjoint_samples: Vec::new(),
            tol,
            seed: inputs.seed,
            adjoint: None,
        };
    };
    let p_t = transversality_covector(problem, proc, &mult);
    let adjoint = match (&inputs.adjoint, &p_t) {
        (Some(a), _) => Ok(a.clone()),
        (None, Ok(pt)) => adjoint_backward(problem, proc, mult.lambda0(), pt),
        (None, Err(e)) => Err(e.clone()),
    };

    let mut conditions = Vec::new();
    conditions.push(ConditionCheck {
        name: "NN",
        residual: mult.max_abs(),
        tolerance: tol,
        verdict: if mult.max_abs() > tol { Verdict::Pass } else { Verdict::Fail },
        location: None,
        note: Some("residual is max(|λ|, |μ|), which must exceed the tolerance".into()),
    });
    let neg = mult.lambda.iter().fold(0.0f64, |m, v| m.max(-v));
    conditions.push(ConditionCheck::upper("Si", neg, tol, None));
    let x_t = proc.terminal_state();
    let slack = (1..=d.inequalities)
        .map(|a| (mult.lambda.get(a).copied().unwrap_or(0.0) * problem.model.terminal(a, &x_t, &proc.pi)).abs())
        .fold(0.0, f64::max);
    conditions.push(ConditionCheck::upper("Sl", slack, tol, None).with_note(format!("active-set tolerance {ACTIVE_TOL:e}")));

    let adjoint = match adjoint {
        Ok(a) => a,
        Err(e) => {
            for n in &names[3..] {
                conditions.push(ConditionCheck::not_checked(n, tol, e.to_string()));
            }
            return PmpCertificate {
                multipliers,
                multiplier_note,
                conditions,
                qualification,
                surjectivity_candidates,
                adjoint_samples: Vec::new(),
                tol,
                seed: inputs.seed,
                adjoint: None,
            };
        }
    };

    match &p_t {
        Ok(pt) => conditions.push(ConditionCheck::upper("TC", norm(&sub(pt, &adjoint.terminal())), tol, Some(problem.horizon))),
        Err(e) => conditions.push(ConditionCheck::not_checked("TC", tol, e.to_string())),
    }
    let lambda0 = adjoint.lambda0;
    if lambda0 != mult.lambda0() {
        conditions.push(ConditionCheck::not_checked("AE", tol, "adjoint integrated with a different λ₀".into()));
    } else {
        match adjoint_residual(problem, proc, &adjoint) {
            Ok((r, t)) => conditions.push(ConditionCheck::upper("AE", r, tol, Some(t))),
            Err(e) => conditions.push(ConditionCheck::not_checked("AE", tol, e.to_string())),
        }
    }

    match along(proc, &adjoint) {
        Ok(al) => {
            conditions.push(maximum_check(problem, &al, &proc.pi, lambda0, tol, inputs.seed));
            conditions.push(continuity_check(problem, &al, &proc.pi, lambda0, tol));
            if inputs.check_dh {
                conditions.push(dh_check(problem, &al, &proc.pi, lambda0, tol));
            } else {
                conditions.push(ConditionCheck::not_checked("dH", tol, "disabled".into()));
            }
        }
        Err(e) => {
            for n in ["MP", "CH", "dH"] {
                conditions.push(ConditionCheck::not_checked(n, tol, e.to_string()));
            }
        }
    }
    PmpCertificate {
        multipliers,
        multiplier_note,
        conditions,
        qualification,
        surjectivity_candidates,
        adjoint_samples: adjoint.samples(16),
        tol,
        seed: inputs.seed,
        adjoint: Some(adjoint),
    }
}

fn sample_points(grid: &Grid) -> Vec<(usize, f64)> {
    (0..grid.num_segments())
        .flat_map(|i| {
            let (a, b) = grid.segment_bounds(i);
            (0..=TIME_SAMPLES).map(move |k| (i, a + (b - a) * k as f64 / TIME_SAMPLES as f64))
        })
        .collect()
}

fn maximum_check(problem: &BolzaProblem, al: &Along, pi: &[f64], lambda0: f64, tol: f64, seed: u64) -> ConditionCheck {
    let ham = problem.hamiltonian(lambda0);
    let points = sample_points(&al.grid);
    let gaps: Vec<(f64, f64)> = points
        .par_iter()
        .enumerate()
        .map(|(idx, &(i, t))| {
            let (x, u0, p) = ((al.x[i])(t), (al.u[i])(t), (al.p[i])(t));
            let h = |z: &[f64]| ham.value(t, &x, z, &p, pi);
            let grad = |z: &[f64]| ham.control_gradient(t, &x, z, &p, pi);
            let h0 = h(&u0);
            let (lo, hi) = problem.control_set.scan_box(&u0);
            let mut best = tensor_grid(&lo, &hi, &u0).iter().map(|z| h(z)).fold(f64::NEG_INFINITY, f64::max);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            for s in 0..MP_MULTISTARTS {
                let start = if s == 0 {
                    u0.clone()
                } else {
                    lo.iter().zip(&hi).map(|(a, b)| rng.random_range(*a..=*b)).collect()
                };
                best = best.max(local_ascent(&h, &grad, start, &lo, &hi).1);
            }
            ((best - h0).max(0.0), t)
        })
        .collect();
    let (gap, at) = gaps.into_iter().fold((0.0, 0.0), |m, g| if g.0 > m.0 { g } else { m });
    ConditionCheck::upper("MP", gap, tol, Some(at)).with_note(if gap <= tol {
        "no counterexample found"
    } else {
        "ascent found a control with larger Hamiltonian"
    })
}

fn hbar_on(problem: &BolzaProblem, al: &Along, pi: &[f64], lambda0: f64, i: usize, t: f64) -> f64 {
    problem.hamiltonian(lambda0).value(t, &(al.x[i])(t), &(al.u[i])(t), &(al.p[i])(t), pi)
}

fn continuity_check(problem: &BolzaProblem, al: &Along, pi: &[f64], lambda0: f64, tol: f64) -> ConditionCheck {
    let mut worst = (0.0, None);
    for i in 1..al.grid.num_segments() {
        let tau = al.grid.segment_bounds(i).0;
        let jump = (hbar_on(problem, al, pi, lambda0, i, tau) - hbar_on(problem, al, pi, lambda0, i - 1, tau)).abs();
        if jump > worst.0 {
            worst = (jump, Some(tau));
        }
    }
    ConditionCheck::upper("CH", worst.0, tol, worst.1)
}

fn dh_check(problem: &BolzaProblem, al: &Along, pi: &[f64], lambda0: f64, tol: f64) -> ConditionCheck {
    let ham = problem.hamiltonian(lambda0);
    let mut worst = (0.0, None);
    for (i, t) in sample_points(&al.grid) {
        let (a, b) = al.grid.segment_bounds(i);
        let hbar = |s: f64| vec![hbar_on(problem, al, pi, lambda0, i, s)];
        let dh = segment_derivative(&hbar, t, a, b, 1e-4 * (b - a))[0];
        let partial = ham.time_partial(t, &(al.x[i])(t), &(al.u[i])(t), &(al.p[i])(t), pi);
        let r = (dh - partial).abs();
        if !(r <= worst.0) {
            worst = (r, Some(t));
        }
    }
    ConditionCheck::upper("dH", worst.0, tol, worst.1)
}

/// Largest `‖D₃H_B(t, x, u₀(t), p(t))‖` over the certificate sample times at
/// which `u₀(t)` is interior to the control set.
pub fn control_stationarity(problem: &BolzaProblem, proc: &Process, adjoint: &AdjointPath) -> crate::error::Result<f64> {
    let al = along(proc, adjoint)?;
    let ham = problem.hamiltonian(adjoint.lambda0);
    Ok(sample_points(&al.grid)
        .into_iter()
        .filter_map(|(i, t)| {
            let u = (al.u[i])(t);
            problem
                .control_set
                .is_interior(&u, 1e-9)
                .then(|| norm(&ham.control_gradient(t, &(al.x[i])(t), &u, &(al.p[i])(t), &proc.pi)))
        })
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NonvanishingMode {
    /// `max(λ₀, ‖p(t)‖)`.
    Pair,
    /// `‖p(t)‖`.
    AdjointOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NonvanishingReport {
    pub mode: NonvanishingMode,
    pub minimum: f64,
    pub location: f64,
    pub degenerate: bool,
}

/// Samples per segment of [`nonvanishing_scan`].
pub const NONVANISHING_SAMPLES: usize = 128;

/// Minimum over a dense time grid of `max(λ₀, ‖p(t)‖)` or `‖p(t)‖`.
pub fn nonvanishing_scan(adjoint: &AdjointPath, mode: NonvanishingMode) -> NonvanishingReport {
    let lambda0 = match mode {
        NonvanishingMode::Pair => adjoint.lambda0.abs(),
        NonvanishingMode::AdjointOnly => 0.0,
    };
    let (minimum, location) = adjoint
        .p
        .grid()
        .sample_times(NONVANISHING_SAMPLES)
        .into_iter()
        .map(|t| (lambda0.max(norm(&adjoint.p.value_at(t))), t))
        .fold((f64::INFINITY, 0.0), |m, v| if v.0 < m.0 { v } else { m });
    NonvanishingReport {
        mode,
        minimum,
        location,
        degenerate: minimum == 0.0,
    }
}
