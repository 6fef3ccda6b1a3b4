//! Sensitivity of the value function `V[π]`: the envelope formula for its
//! directional derivative, the gradient, finite-difference oracles and
//! continuity scans around a base parameter.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{OcError, Result};
use crate::piecewise::{dot, fmt_real, merge_grids, norm, sub, PiecewiseFn};
use crate::pmp::{adjoint_backward, shooting_solve, solve_multipliers_li, transversality_covector, AdjointPath, Multipliers, ShootingOptions};
use crate::problem::{criterion, BolzaProblem, Process};
use crate::quadrature::{integrate_scalar, integrate_vec, QuadratureOptions};

/// Solution of the problem at one parameter value, with the multipliers and
/// adjoint when the provider knows them.
#[derive(Debug, Clone)]
pub struct FamilySolution {
    pub process: Process,
    pub multipliers: Option<Multipliers>,
    pub adjoint: Option<AdjointPath>,
}

/// `π ↦ (x[π], u[π])`. Providers must be deterministic and re-entrant.
pub trait SolutionFamily: Send + Sync {
    fn solve(&self, pi: &[f64]) -> Result<FamilySolution>;
}

pub type ProcessMap = Arc<dyn Fn(&[f64]) -> Result<Process> + Send + Sync>;

/// Family given by a closed-form solution map.
#[derive(Clone)]
pub struct AnalyticFamily {
    map: ProcessMap,
}

impl AnalyticFamily {
    pub fn new(map: impl Fn(&[f64]) -> Result<Process> + Send + Sync + 'static) -> Self {
        Self { map: Arc::new(map) }
    }

    /// Known optima of a builtin problem.
    pub fn builtin(problem: &BolzaProblem) -> Self {
        let p = problem.clone();
        Self::new(move |pi| crate::builtins::reference_process(&p, pi))
    }
}

impl SolutionFamily for AnalyticFamily {
    fn solve(&self, pi: &[f64]) -> Result<FamilySolution> {
        Ok(FamilySolution {
            process: (self.map)(pi)?,
            multipliers: None,
            adjoint: None,
        })
    }
}

/// Family obtained by indirect shooting, warm-started from the solution at a
/// base parameter.
pub struct ShootingFamily {
    problem: BolzaProblem,
    warm_p0: Vec<f64>,
    warm_mu: Vec<f64>,
    opts: ShootingOptions,
}

impl ShootingFamily {
    pub fn new(problem: &BolzaProblem, pi0: &[f64], guess: (&[f64], &[f64]), opts: ShootingOptions) -> Result<Self> {
        let base = shooting_solve(problem, pi0, guess, &opts)?;
        Ok(Self {
            problem: problem.clone(),
            warm_p0: base.adjoint.initial(),
            warm_mu: base.multipliers.mu.clone(),
            opts,
        })
    }
}

impl SolutionFamily for ShootingFamily {
    fn solve(&self, pi: &[f64]) -> Result<FamilySolution> {
        let r = shooting_solve(&self.problem, pi, (&self.warm_p0, &self.warm_mu), &self.opts)?;
        Ok(FamilySolution {
            process: r.process,
            multipliers: Some(r.multipliers),
            adjoint: Some(r.adjoint),
        })
    }
}

/// `V[π]`, the criterion of the family's solution at `π`.
pub fn value(problem: &BolzaProblem, family: &dyn SolutionFamily, pi: &[f64]) -> Result<f64> {
    let d = problem.dims();
    if pi.len() != d.param {
        return Err(OcError::dim("parameter", d.param, pi.len()));
    }
    criterion(problem, &family.solve(pi)?.process)
}

/// Covectors in `ℝ^{np}` whose sum, applied to `δπ`, is the envelope
/// directional derivative at `π₀`.
#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeTerms {
    pub pi0: Vec<f64>,
    /// `D₂g⁰(x(T), π₀)`.
    pub g0: Vec<f64>,
    /// `Σ λᵢ D₂gⁱ(x(T), π₀)`.
    pub g: Vec<f64>,
    /// `Σ μⱼ D₂hʲ(x(T), π₀)`.
    pub h: Vec<f64>,
    /// `∫₀ᵀ D₄f⁰(t, x, u, π₀) dt`.
    pub f0: Vec<f64>,
    /// `∫₀ᵀ p(t)·D₄f(t, x, u, π₀) dt`.
    pub f: Vec<f64>,
    pub multipliers: Multipliers,
    #[serde(skip)]
    pub adjoint: AdjointPath,
    #[serde(skip)]
    pub process: Process,
}

impl EnvelopeTerms {
    pub fn gradient(&self) -> Vec<f64> {
        (0..self.pi0.len())
            .map(|k| self.g0[k] + self.g[k] + self.h[k] + self.f0[k] + self.f[k])
            .collect()
    }

    pub fn directional(&self, dpi: &[f64]) -> EnvelopeReport {
        let (tg0, tg, th, tf0, tf) = (dot(&self.g0, dpi), dot(&self.g, dpi), dot(&self.h, dpi), dot(&self.f0, dpi), dot(&self.f, dpi));
        EnvelopeReport {
            pi0: self.pi0.clone(),
            direction: dpi.to_vec(),
            tg0,
            tg,
            th,
            tf0,
            tf,
            total: tg0 + tg + th + tf0 + tf,
            fd_step: None,
            fd_value: None,
            fd_error: None,
        }
    }
}

/// The five summands of the envelope formula along `direction`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeReport {
    pub pi0: Vec<f64>,
    pub direction: Vec<f64>,
    pub tg0: f64,
    pub tg: f64,
    pub th: f64,
    pub tf0: f64,
    pub tf: f64,
    pub total: f64,
    pub fd_step: Option<f64>,
    /// Forward difference `(V(π₀ + hδπ) − V(π₀))/h`.
    pub fd_value: Option<f64>,
    pub fd_error: Option<f64>,
}

impl EnvelopeReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Step of the forward-difference check attached to envelope reports.
pub const ENVELOPE_FD_STEP: f64 = 1e-6;

/// Multipliers (normalized, from the linearly free terminal family), adjoint
/// and the five covector terms at `π₀`.
pub fn envelope_terms(problem: &BolzaProblem, family: &dyn SolutionFamily, pi0: &[f64]) -> Result<EnvelopeTerms> {
    let d = problem.dims();
    if pi0.len() != d.param {
        return Err(OcError::dim("parameter", d.param, pi0.len()));
    }
    if !problem.has_fixed_initial_state() {
        return Err(OcError::Unsupported(
            "the envelope formula needs an initial state that does not depend on the parameter".into(),
        ));
    }
    let sol = family.solve(pi0)?;
    let proc = sol.process;
    // An LI violation is returned as is: the multipliers need not be unique.
    let mult = solve_multipliers_li(problem, &proc)?;
    let p_t = transversality_covector(problem, &proc, &mult)?;
    let adjoint = adjoint_backward(problem, &proc, 1.0, &p_t)?;

    let m = &problem.model;
    let x_t = proc.terminal_state();
    let np = d.param;
    let g0 = m.terminal_partials(0, &x_t, pi0).dp;
    let mut g = vec![0.0; np];
    for i in 1..=d.inequalities {
        for (o, v) in g.iter_mut().zip(m.terminal_partials(i, &x_t, pi0).dp) {
            *o += mult.lambda[i] * v;
        }
    }
    let mut h = vec![0.0; np];
    for j in 0..d.equalities {
        for (o, v) in h.iter_mut().zip(m.equality_partials(j, &x_t, pi0).dp) {
            *o += mult.mu[j] * v;
        }
    }

    let grid = merge_grids(&proc.segments()?.0, adjoint.p.grid())?;
    let xg = proc.x.on_grid(&grid)?;
    let ug = proc.u.on_grid(&grid)?;
    let pg = adjoint.p.on_grid(&grid)?;
    let mut f0 = vec![0.0; np];
    let mut f = vec![0.0; np];
    for i in 0..grid.num_segments() {
        let (a, b) = grid.segment_bounds(i);
        let (xs, us, ps) = (xg.value_segment(i), ug.segment(i), pg.value_segment(i));
        // Both integrands in one pass: [D₄f⁰ | pᵀD₄f].
        let both = integrate_vec(
            |t| {
                let (x, u, p) = (xs(t), us(t), ps(t));
                let mut v = m.running_reward_partials(t, &x, &u, pi0).dp;
                let dp = m.vector_field_partials(t, &x, &u, pi0).dp;
                v.extend((0..np).map(|k| (0..d.state).map(|r| p[r] * dp[(r, k)]).sum::<f64>()));
                v
            },
            a,
            b,
            2 * np,
            &problem.quadrature,
        )?;
        for k in 0..np {
            f0[k] += both[k];
            f[k] += both[np + k];
        }
    }
    Ok(EnvelopeTerms {
        pi0: pi0.to_vec(),
        g0,
        g,
        h,
        f0,
        f,
        multipliers: mult,
        adjoint,
        process: proc,
    })
}

/// Envelope directional derivative `D_G⁺V[π₀; δπ]`, with a forward-difference
/// comparison at step [`ENVELOPE_FD_STEP`].
pub fn envelope_directional(problem: &BolzaProblem, family: &dyn SolutionFamily, pi0: &[f64], dpi: &[f64]) -> Result<EnvelopeReport> {
    if dpi.len() != pi0.len() {
        return Err(OcError::dim("parameter direction", pi0.len(), dpi.len()));
    }
    let terms = envelope_terms(problem, family, pi0)?;
    let mut rep = terms.directional(dpi);
    let v0 = criterion(problem, &terms.process)?;
    let shifted: Vec<f64> = pi0.iter().zip(dpi).map(|(p, d)| p + ENVELOPE_FD_STEP * d).collect();
    if let Ok(v1) = value(problem, family, &shifted) {
        let fd = (v1 - v0) / ENVELOPE_FD_STEP;
        rep.fd_step = Some(ENVELOPE_FD_STEP);
        rep.fd_value = Some(fd);
        rep.fd_error = Some((rep.total - fd).abs());
    }
    Ok(rep)
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientReport {
    pub pi0: Vec<f64>,
    pub gradient: Vec<f64>,
    pub check_direction: Vec<f64>,
    /// `|D_GV·δπ − D_G⁺V[π₀; δπ]|` for the random check direction.
    pub linearity_residual: f64,
    pub terms: EnvelopeTerms,
}

/// Seed of every random direction drawn in this module.
pub const SCAN_SEED: u64 = 0x5EED;

fn unit_directions(np: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| loop {
            let v: Vec<f64> = (0..np).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = norm(&v);
            if n > 1e-12 {
                break v.into_iter().map(|x| x / n).collect();
            }
        })
        .collect()
}

/// `D_GV[π₀]`, one basis direction at a time, plus a linearity check along a
/// seeded random direction.
pub fn envelope_gradient(problem: &BolzaProblem, family: &dyn SolutionFamily, pi0: &[f64]) -> Result<GradientReport> {
    let terms = envelope_terms(problem, family, pi0)?;
    let np = pi0.len();
    let gradient: Vec<f64> = (0..np)
        .map(|k| {
            let mut e = vec![0.0; np];
            e[k] = 1.0;
            terms.directional(&e).total
        })
        .collect();
    let check_direction = if np == 0 { Vec::new() } else { unit_directions(np, 1, SCAN_SEED).remove(0) };
    let linearity_residual = (dot(&gradient, &check_direction) - terms.directional(&check_direction).total).abs();
    Ok(GradientReport {
        pi0: pi0.to_vec(),
        gradient,
        check_direction,
        linearity_residual,
        terms,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct FdRow {
    pub h: f64,
    pub forward: Option<f64>,
    pub central: Option<f64>,
    pub status: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct FdTable {
    pub pi0: Vec<f64>,
    pub direction: Vec<f64>,
    pub rows: Vec<FdRow>,
    /// Richardson extrapolation of the two smallest-step forward differences.
    pub richardson: Option<f64>,
    /// Order of convergence of the forward differences, from the three
    /// smallest steps.
    pub observed_order: Option<f64>,
}

impl FdTable {
    /// Least-squares slope of `log |forward(h) − reference|` against `log h`.
    pub fn order_against(&self, reference: f64) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter_map(|r| r.forward.map(|f| (r.h, (f - reference).abs())))
            .filter(|(_, e)| *e > 0.0)
            .map(|(h, e)| (h.ln(), e.ln()))
            .collect();
        slope(&pts)
    }
}

pub(crate) fn slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

/// Forward and central differences of `V` along `δπ` for each step in `hs`.
pub fn value_fd_oracle(problem: &BolzaProblem, family: &dyn SolutionFamily, pi0: &[f64], dpi: &[f64], hs: &[f64]) -> Result<FdTable> {
    let v0 = value(problem, family, pi0)?;
    let at = |s: f64| -> Result<f64> {
        let p: Vec<f64> = pi0.iter().zip(dpi).map(|(a, b)| a + s * b).collect();
        value(problem, family, &p)
    };
    let rows: Vec<FdRow> = hs
        .par_iter()
        .map(|&h| match (at(h), at(-h)) {
            (Ok(vp), Ok(vm)) => FdRow {
                h,
                forward: Some((vp - v0) / h),
                central: Some((vp - vm) / (2.0 * h)),
                status: "ok".into(),
            },
            (Ok(vp), Err(e)) => FdRow {
                h,
                forward: Some((vp - v0) / h),
                central: None,
                status: format!("failed at π₀ − hδπ: {e}"),
            },
            (Err(e), _) => FdRow {
                h,
                forward: None,
                central: None,
                status: format!("failed at π₀ + hδπ: {e}"),
            },
        })
        .collect();
    let mut fwd: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.forward.map(|f| (r.h, f))).collect();
    fwd.sort_by(|a, b| a.0.total_cmp(&b.0));
    let richardson = (fwd.len() >= 2).then(|| {
        let ((h2, f2), (h1, f1)) = (fwd[0], fwd[1]);
        let r = h1 / h2;
        (r * f2 - f1) / (r - 1.0)
    });
    let observed_order = (fwd.len() >= 3)
        .then(|| {
            let (h3, f3) = fwd[0];
            let (h2, f2) = fwd[1];
            let (_, f1) = fwd[2];
            let (d12, d23) = ((f1 - f2).abs(), (f2 - f3).abs());
            (d12 > 0.0 && d23 > 0.0).then(|| (d12 / d23).ln() / (h2 / h3).ln())
        })
        .flatten();
    Ok(FdTable {
        pi0: pi0.to_vec(),
        direction: dpi.to_vec(),
        rows,
        richardson,
        observed_order,
    })
}

pub type Integrand = dyn Fn(f64, &[f64]) -> f64 + Send + Sync;
pub type IntegrandGradient = dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync;

/// `∫₀ᵀ D₂f(t, 𝔵₀(t))·𝔥(t) dt`, the differential of `𝔵 ↦ ∫₀ᵀ f(t, 𝔵(t)) dt`
/// at `𝔵₀` applied to `𝔥`.
pub fn integral_functional_differential(df: &IntegrandGradient, x0: &PiecewiseFn, h: &PiecewiseFn, opts: &QuadratureOptions) -> Result<f64> {
    if x0.dim() != h.dim() {
        return Err(OcError::dim("direction", x0.dim(), h.dim()));
    }
    let grid = merge_grids(x0.grid(), h.grid())?;
    let (xg, hg) = (x0.on_grid(&grid)?, h.on_grid(&grid)?);
    let mut total = 0.0;
    for i in 0..grid.num_segments() {
        let (a, b) = grid.segment_bounds(i);
        let (xs, hs) = (xg.segment(i), hg.segment(i));
        total += integrate_scalar(|t| dot(&df(t, &xs(t)), &hs(t)), a, b, opts)?;
    }
    Ok(total)
}

/// `F(𝔵) = ∫₀ᵀ f(t, 𝔵(t)) dt`.
pub fn integral_functional(f: &Integrand, x: &PiecewiseFn, opts: &QuadratureOptions) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..x.grid().num_segments() {
        let (a, b) = x.grid().segment_bounds(i);
        let xs = x.segment(i);
        total += integrate_scalar(|t| f(t, &xs(t)), a, b, opts)?;
    }
    Ok(total)
}

/// `(F(𝔵₀ + θ𝔥) − F(𝔵₀))/θ`.
pub fn integral_functional_fd(f: &Integrand, x0: &PiecewiseFn, h: &PiecewiseFn, theta: f64, opts: &QuadratureOptions) -> Result<f64> {
    let moved = PiecewiseFn::combine(&[x0, h], x0.dim(), move |_, v| v[0].iter().zip(&v[1]).map(|(a, b)| a + theta * b).collect())?;
    Ok((integral_functional(f, &moved, opts)? - integral_functional(f, x0, opts)?) / theta)
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanOptions {
    /// Shell radii relative to `max(1, ‖π₀‖)`.
    pub radii: Vec<f64>,
    pub directions: usize,
    pub seed: u64,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            radii: vec![1e-1, 1e-2, 1e-3, 1e-4, 1e-5],
            directions: 8,
            seed: SCAN_SEED,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScanKind {
    Multipliers,
    Adjoint,
    Gradient,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleStatus {
    Ok,
    /// The linear independence condition failed at this parameter.
    OutOfQ,
    Failed(String),
}

#[derive(Debug, Clone, Serialize)]
pub struct ShellSample {
    pub pi: Vec<f64>,
    pub distance: f64,
    pub deviation: f64,
    /// Second deviation family (the linearization residual for gradient scans).
    pub secondary: Option<f64>,
    pub diagnostics: BTreeMap<String, f64>,
    pub status: SampleStatus,
}

#[derive(Debug, Clone, Serialize)]
pub struct Shell {
    pub radius: f64,
    pub max_deviation: Option<f64>,
    pub max_secondary: Option<f64>,
    pub samples: Vec<ShellSample>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContinuityScan {
    pub kind: ScanKind,
    pub pi0: Vec<f64>,
    /// Sorted by increasing radius.
    pub shells: Vec<Shell>,
    /// Deviations increase strictly with the radius (values below
    /// [`ZERO_FLOOR`] count as equal).
    pub monotone: bool,
    pub base_diagnostics: BTreeMap<String, f64>,
}

pub const ZERO_FLOOR: f64 = 1e-15;

impl ContinuityScan {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("radius,distance,deviation,secondary,status\n");
        for sh in &self.shells {
            for smp in &sh.samples {
                let status = match &smp.status {
                    SampleStatus::Ok => "ok".to_string(),
                    SampleStatus::OutOfQ => "out-of-Q".to_string(),
                    SampleStatus::Failed(m) => format!("failed: {}", m.replace([',', '\n'], ";")),
                };
                s.push_str(&format!(
                    "{},{},{},{},{}\n",
                    fmt_real(sh.radius),
                    fmt_real(smp.distance),
                    fmt_real(smp.deviation),
                    smp.secondary.map(fmt_real).unwrap_or_default(),
                    status
                ));
            }
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scan serializes")
    }

    pub fn deviations(&self) -> Vec<Option<f64>> {
        self.shells.iter().map(|s| s.max_deviation).collect()
    }
}

fn monotone(values: &[Option<f64>]) -> bool {
    values.windows(2).all(|w| match (w[0], w[1]) {
        (Some(a), Some(b)) => a < b || (a <= ZERO_FLOOR && b <= ZERO_FLOOR),
        _ => false,
    })
}

struct Base {
    sol: FamilySolution,
    terms: Option<EnvelopeTerms>,
    value: f64,
}

fn li_or_out_of_q(e: OcError) -> SampleStatus {
    match e {
        OcError::LiViolated { .. } => SampleStatus::OutOfQ,
        other => SampleStatus::Failed(other.to_string()),
    }
}

/// Largest `‖D₂φ(t, x[π], u[π], π) − D₂φ(t, x[π₀], u[π₀], π₀)‖` integrated
/// over `[0, T]` for the vector field (`ψ₁`) and the running reward (`ψ₁⁰`).
fn psi_terms(problem: &BolzaProblem, base: &Process, other: &Process) -> Result<(f64, f64)> {
    let m = &problem.model;
    let grid = merge_grids(&base.segments()?.0, &other.segments()?.0)?;
    let (x0, u0) = (base.x.on_grid(&grid)?, base.u.on_grid(&grid)?);
    let (x1, u1) = (other.x.on_grid(&grid)?, other.u.on_grid(&grid)?);
    let (mut psi1, mut psi10) = (0.0, 0.0);
    for i in 0..grid.num_segments() {
        let (a, b) = grid.segment_bounds(i);
        let v = integrate_vec(
            |t| {
                let (xa, ua, xb, ub) = (x0.value_segment(i)(t), u0.segment(i)(t), x1.value_segment(i)(t), u1.segment(i)(t));
                let fa = m.vector_field_partials(t, &xa, &ua, &base.pi).dx;
                let fb = m.vector_field_partials(t, &xb, &ub, &other.pi).dx;
                let ra = m.running_reward_partials(t, &xa, &ua, &base.pi).dx;
                let rb = m.running_reward_partials(t, &xb, &ub, &other.pi).dx;
                vec![(fb - fa).norm(), norm(&sub(&rb, &ra))]
            },
            a,
            b,
            2,
            &problem.quadrature,
        )?;
        psi1 += v[0];
        psi10 += v[1];
    }
    Ok((psi1, psi10))
}

fn adjoint_distance(a: &AdjointPath, b: &AdjointPath) -> Result<f64> {
    let diff = PiecewiseFn::combine(&[a.p.as_piecewise(), b.p.as_piecewise()], a.p.dim(), |_, v| sub(&v[0], &v[1]))?;
    Ok(diff.sup_norm())
}

fn multipliers_deviation(a: &Multipliers, b: &Multipliers) -> f64 {
    a.lambda
        .iter()
        .zip(&b.lambda)
        .chain(a.mu.iter().zip(&b.mu))
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn sample(problem: &BolzaProblem, family: &dyn SolutionFamily, kind: ScanKind, base: &Base, pi: &[f64]) -> ShellSample {
    let distance = norm(&sub(pi, &base.sol.process.pi));
    let mut out = ShellSample {
        pi: pi.to_vec(),
        distance,
        deviation: f64::NAN,
        secondary: None,
        diagnostics: BTreeMap::new(),
        status: SampleStatus::Ok,
    };
    let base_terms = base.terms.as_ref().expect("base terms computed for every scan kind");
    let result: std::result::Result<(), SampleStatus> = (|| {
        let terms = envelope_terms(problem, family, pi).map_err(li_or_out_of_q)?;
        match kind {
            ScanKind::Multipliers => {
                out.deviation = multipliers_deviation(&terms.multipliers, &base_terms.multipliers);
            }
            ScanKind::Adjoint => {
                out.deviation = adjoint_distance(&terms.adjoint, &base_terms.adjoint).map_err(|e| SampleStatus::Failed(e.to_string()))?;
                out.diagnostics.insert(
                    "terminal_distance".into(),
                    norm(&sub(&terms.adjoint.terminal(), &base_terms.adjoint.terminal())),
                );
                let (psi1, psi10) = psi_terms(problem, &base.sol.process, &terms.process).map_err(|e| SampleStatus::Failed(e.to_string()))?;
                out.diagnostics.insert("psi1".into(), psi1);
                out.diagnostics.insert("psi1_0".into(), psi10);
            }
            ScanKind::Gradient => {
                let g0 = base_terms.gradient();
                out.deviation = norm(&sub(&terms.gradient(), &g0));
                let v = criterion(problem, &terms.process).map_err(|e| SampleStatus::Failed(e.to_string()))?;
                let step = sub(pi, &base.sol.process.pi);
                out.secondary = Some((v - base.value - dot(&g0, &step)).abs() / distance);
            }
        }
        Ok(())
    })();
    if let Err(status) = result {
        out.status = status;
    }
    out
}

/// Deviation of multipliers, adjoint or gradient on shells `π₀ + r·d` with
/// seeded random unit directions `d`.
pub fn continuity_scan(problem: &BolzaProblem, family: &dyn SolutionFamily, pi0: &[f64], kind: ScanKind, opts: &ScanOptions) -> Result<ContinuityScan> {
    let d = problem.dims();
    if pi0.len() != d.param {
        return Err(OcError::dim("parameter", d.param, pi0.len()));
    }
    let sol = family.solve(pi0)?;
    let terms = envelope_terms(problem, family, pi0)?;
    let base = Base {
        value: criterion(problem, &sol.process)?,
        sol,
        terms: Some(terms),
    };
    let mut radii = opts.radii.clone();
    radii.sort_by(|a, b| a.total_cmp(b));
    let scale = norm(pi0).max(1.0);
    let dirs = if d.param == 0 { vec![Vec::new()] } else { unit_directions(d.param, opts.directions, opts.seed) };
    let jobs: Vec<(usize, Vec<f64>)> = radii
        .iter()
        .enumerate()
        .flat_map(|(k, r)| {
            dirs.iter()
                .map(move |dir| (k, pi0.iter().zip(dir).map(|(p, v)| p + r * scale * v).collect::<Vec<f64>>()))
                .collect::<Vec<_>>()
        })
        .collect();
    let samples: Vec<(usize, ShellSample)> = jobs
        .par_iter()
        .map(|(k, pi)| (*k, sample(problem, family, kind, &base, pi)))
        .collect();
    let shells: Vec<Shell> = radii
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let ss: Vec<ShellSample> = samples.iter().filter(|(j, _)| *j == k).map(|(_, s)| s.clone()).collect();
            let ok = || ss.iter().filter(|s| s.status == SampleStatus::Ok);
            let max_of = |it: Vec<f64>| it.into_iter().reduce(f64::max);
            Shell {
                radius: r * scale,
                max_deviation: max_of(ok().map(|s| s.deviation).collect()),
                max_secondary: max_of(ok().filter_map(|s| s.secondary).collect()),
                samples: ss,
            }
        })
        .collect();
    let mut mono = monotone(&shells.iter().map(|s| s.max_deviation).collect::<Vec<_>>());
    if kind == ScanKind::Gradient {
        mono &= monotone(&shells.iter().map(|s| s.max_secondary).collect::<Vec<_>>());
    }
    let mut base_diagnostics = BTreeMap::new();
    base_diagnostics.insert("value".into(), base.value);
    Ok(ContinuityScan {
        kind,
        pi0: pi0.to_vec(),
        shells,
        monotone: mono,
        base_diagnostics,
    })
}

pub fn multiplier_continuity_scan(problem: &BolzaProblem, family: &dyn SolutionFamily, pi0: &[f64], opts: &ScanOptions) -> Result<ContinuityScan> {
    continuity_scan(problem, family, pi0, ScanKind::Multipliers, opts)
}

pub fn adjoint_continuity_scan(problem: &BolzaProblem, family: &dyn SolutionFamily, pi0: &[f64], opts: &ScanOptions) -> Result<ContinuityScan> {
    continuity_scan(problem, family, pi0, ScanKind::Adjoint, opts)
}

/// Gradient deviation and uniform linearization residual per shell.
pub fn frechet_continuity_check(problem: &BolzaProblem, family: &dyn SolutionFamily, pi0: &[f64], opts: &ScanOptions) -> Result<ContinuityScan> {
    continuity_scan(problem, family, pi0, ScanKind::Gradient, opts)
}
