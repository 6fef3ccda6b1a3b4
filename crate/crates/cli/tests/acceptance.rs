//! Acceptance criteria. Runs without the libtest harness so that every
//! criterion prints its PASS/FAIL line; exits nonzero if any fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use octool_core::builtins;
use octool_core::envelope::{
    adjoint_continuity_scan, envelope_directional, envelope_gradient, frechet_continuity_check, multiplier_continuity_scan,
    value_fd_oracle, AnalyticFamily, ContinuityScan, ScanOptions, ShootingFamily, ZERO_FLOOR,
};
use octool_core::exprdiff::{bind_problem, parse, ExprDims, ExprSources, Point, Scope};
use octool_core::flow::{expansion_residual_study, resolvent_build, simulate, RowStatus, SpikeList};
use octool_core::piecewise::SegmentFn;
use octool_core::pmp::{
    adjoint_backward, compute_multipliers, solve_multipliers_li, transversality_covector, verify_certificate, CertificateInputs,
    ShootingOptions, Verdict,
};
use octool_core::problem::{augment_to_mayer, criterion, lift_process, FieldPartials};
use octool_core::{BolzaProblem, ControlSet, DerivMode, Dims, Grid, OcError, OcpModel, PiecewiseC1Fn, PiecewiseFn, Process};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = octool_core::Result<(bool, String)>;

const SEED: u64 = 0x5EED;

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(SEED)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

// 1

fn poly_segment(coeffs: Vec<Vec<f64>>, a: f64, base: Vec<f64>) -> (SegmentFn, SegmentFn) {
    let c = Arc::new(coeffs);
    let b = Arc::new(base);
    let (c2, b2) = (c.clone(), b.clone());
    let value: SegmentFn = Arc::new(move |t| {
        let s = t - a;
        c2.iter().zip(b2.iter()).map(|(ck, b0)| b0 + ck.iter().enumerate().map(|(j, cj)| cj * s.powi(j as i32 + 1)).sum::<f64>()).collect()
    });
    let deriv: SegmentFn = Arc::new(move |t| {
        let s = t - a;
        c.iter().map(|ck| ck.iter().enumerate().map(|(j, cj)| (j + 1) as f64 * cj * s.powi(j as i32)).sum()).collect()
    });
    (value, deriv)
}

fn random_piecewise_poly(rng: &mut ChaCha8Rng) -> octool_core::Result<PiecewiseC1Fn> {
    let horizon = rng.random_range(0.5..3.0);
    let dim = rng.random_range(1..=3);
    let mut interior: Vec<f64> = (0..rng.random_range(0..5)).map(|_| rng.random_range(0.05..0.95) * horizon).collect();
    interior.sort_by(f64::total_cmp);
    let grid = Grid::with_interior(horizon, &interior)?;
    let mut values = Vec::new();
    let mut derivs = Vec::new();
    let mut base: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    for i in 0..grid.num_segments() {
        let (a, b) = grid.segment_bounds(i);
        let deg = rng.random_range(1..=5);
        let coeffs: Vec<Vec<f64>> = (0..dim).map(|_| (0..deg).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let (v, d) = poly_segment(coeffs, a, base.clone());
        base = v(b);
        values.push(v);
        derivs.push(d);
    }
    PiecewiseC1Fn::new(grid, dim, values, derivs)
}

fn fundamental_theorem() -> Outcome {
    let mut rng = rng();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let x = random_piecewise_poly(&mut rng)?;
        let dx = x.extended_derivative();
        for _ in 0..5 {
            let (mut s, mut t) = (rng.random_range(0.0..x.horizon()), rng.random_range(0.0..x.horizon()));
            if s > t {
                std::mem::swap(&mut s, &mut t);
            }
            let lhs = dx.integrate(s, t)?;
            let rhs: Vec<f64> = x.value_at(t).iter().zip(x.value_at(s)).map(|(a, b)| a - b).collect();
            worst = worst.max(dist(&lhs, &rhs));
        }
        let whole = dx.integrate(0.0, x.horizon())?;
        let rhs: Vec<f64> = x.value_at(x.horizon()).iter().zip(x.value_at(0.0)).map(|(a, b)| a - b).collect();
        worst = worst.max(dist(&whole, &rhs));
    }
    Ok((worst <= 1e-10, format!("max error {worst:.2e} over 100 functions (tol 1e-10)")))
}

// 2

/// `x' = Ax + bu` with reward `−½u²`.
struct Linear {
    a: DMatrix<f64>,
    b: Vec<f64>,
}

impl OcpModel for Linear {
    fn dims(&self) -> Dims {
        Dims {
            state: self.a.nrows(),
            control: 1,
            param: 0,
            inequalities: 0,
            equalities: 0,
        }
    }
    fn running_reward(&self, _t: f64, _x: &[f64], u: &[f64], _p: &[f64]) -> f64 {
        -0.5 * u[0] * u[0]
    }
    fn vector_field(&self, _t: f64, x: &[f64], u: &[f64], _p: &[f64]) -> Vec<f64> {
        let ax = &self.a * nalgebra::DVector::from_column_slice(x);
        ax.iter().zip(&self.b).map(|(v, b)| v + b * u[0]).collect()
    }
    fn terminal(&self, _alpha: usize, _x: &[f64], _p: &[f64]) -> f64 {
        0.0
    }
    fn equality(&self, _beta: usize, _x: &[f64], _p: &[f64]) -> f64 {
        0.0
    }
    fn vector_field_partials(&self, _t: f64, _x: &[f64], _u: &[f64], _p: &[f64]) -> FieldPartials {
        let n = self.a.nrows();
        FieldPartials {
            dt: vec![0.0; n],
            dx: self.a.clone(),
            du: DMatrix::from_column_slice(n, 1, &self.b),
            dp: DMatrix::zeros(n, 0),
        }
    }
}

fn resolvent_group_law() -> Outcome {
    let mut rng = rng();
    let (mut worst_exp, mut worst_comp) = (0.0f64, 0.0f64);
    for n in 1..=4 {
        for _ in 0..3 {
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let horizon = 1.0;
            let problem = BolzaProblem::new("linear", horizon, vec![1.0; n], Arc::new(Linear { a: a.clone(), b }), ControlSet::open())?;
            let grid = Grid::with_interior(horizon, &[0.3, 0.7])?;
            let u = PiecewiseFn::step(grid, vec![vec![0.5], vec![-1.0], vec![0.2]])?;
            let proc = simulate(&problem, &u, &[])?;
            let res = resolvent_build(&problem, &proc)?;
            for _ in 0..10 {
                let mut ts = [rng.random_range(0.0..horizon), rng.random_range(0.0..horizon), rng.random_range(0.0..horizon)];
                ts.sort_by(f64::total_cmp);
                let [r, s, t] = ts;
                let oracle = (&a * (t - s)).exp();
                worst_exp = worst_exp.max((res.eval(t, s) - oracle).norm());
                let comp = res.eval(t, s) * res.eval(s, r) - res.eval(t, r);
                worst_comp = worst_comp.max(comp.norm());
            }
        }
    }
    Ok((
        worst_exp <= 1e-9 && worst_comp <= 1e-8,
        format!("‖R − exp(A(t−s))‖ {worst_exp:.2e} (tol 1e-9), composition {worst_comp:.2e} (tol 1e-8)"),
    ))
}

// 3

fn needle_expansion() -> Outcome {
    let p = builtins::lq_scalar();
    let proc = builtins::lq_scalar_optimum(1.0, 1.0, 0.0, 1.0)?;
    let lists: [Vec<(f64, Vec<f64>)>; 3] = [
        vec![(0.2, vec![1.0]), (0.5, vec![-1.0]), (0.7, vec![0.5])],
        vec![(0.1, vec![0.5]), (0.4, vec![2.0]), (0.8, vec![-1.5])],
        vec![(0.3, vec![-0.5]), (0.45, vec![1.0]), (0.9, vec![0.0])],
    ];
    let weights = [0.5, 0.3, 0.2];
    let (mut min_ratio, mut worst_final, mut worst_gron) = (f64::INFINITY, 0.0f64, 0.0f64);
    let mut failed = false;
    for spikes in lists {
        let list = SpikeList::new(spikes, p.horizon, &p.control_set)?;
        let top = (0.5 * list.delta()).min(0.06 * p.horizon);
        let levels: Vec<Vec<f64>> = (0..6).map(|k| weights.iter().map(|w| w * top * 16f64.powi(-k)).collect()).collect();
        let study = expansion_residual_study(&p, &proc, &list, &levels)?;
        failed |= study.rows.iter().any(|r| r.status != RowStatus::Ok);
        for w in study.rows.windows(2) {
            min_ratio = min_ratio.min(w[0].residual_norm / w[1].residual_norm);
        }
        worst_final = worst_final.max(study.rows.last().map_or(f64::NAN, |r| r.residual_norm));
        for r in &study.rows {
            worst_gron = worst_gron.max(r.gronwall_ratio / study.gronwall_bound);
        }
    }
    let ok = !failed && min_ratio >= 8.0 && worst_final < 1e-3 && worst_gron <= 1.0;
    Ok((
        ok,
        format!(
            "min level ratio {min_ratio:.2} (≥ 8), final residual {worst_final:.2e} (< 1e-3), max Gronwall ratio / k₁ {worst_gron:.3} (≤ 1)"
        ),
    ))
}

// 4

const CORE_CONDITIONS: [&str; 7] = ["NN", "Si", "Sl", "TC", "AE", "MP", "CH"];

fn certificates() -> Outcome {
    let cases = [
        ("lq_scalar", builtins::lq_scalar(), builtins::lq_scalar_optimum(1.0, 1.0, 0.0, 1.0)?),
        ("steering", builtins::steering(), builtins::steering_optimum(1.0, 0.0, 1.0)?),
    ];
    let mut ok = true;
    let mut notes = Vec::new();
    for (label, p, proc) in &cases {
        let cert = verify_certificate(p, proc, &CertificateInputs::default());
        let failing: Vec<&str> = CORE_CONDITIONS.iter().copied().filter(|n| cert.verdict(n) != Verdict::Pass).collect();
        ok &= failing.is_empty();
        notes.push(if failing.is_empty() { format!("{label} all pass") } else { format!("{label} not passing {failing:?}") });
    }
    let lq_value = criterion(&cases[0].1, &cases[0].2)?;
    let value_err = (lq_value + 0.5 * 1f64.tanh()).abs();
    ok &= value_err <= 1e-8;

    let (p, proc) = (&cases[0].1, &cases[0].2);
    let u = proc.u.clone();
    let shifted = PiecewiseFn::from_fn(1.0, 1, move |t| vec![u.value_at(t)[0] + 0.1])?;
    let moved = simulate(p, &shifted, &[0.0])?;
    let cert = verify_certificate(p, &moved, &CertificateInputs::default());
    let mp = cert.condition("MP").map_or(f64::NAN, |c| c.residual);
    ok &= cert.verdict("MP") == Verdict::Fail;
    notes.push(format!("lq_scalar value error {value_err:.1e}; +0.1 control: MP {:?} (residual {mp:.2e})", cert.verdict("MP")));
    Ok((ok, format!("{} at tol 1e-6", notes.join("; "))))
}

// 5, 6, 8

/// Two integrators with targets on `x₁` and `x₁ + x₂` and a parameter in
/// the running reward.
fn planar(h: &[&str]) -> octool_core::Result<BolzaProblem> {
    bind_problem(
        "planar",
        &ExprSources {
            f0: "-(u1^2 + u2^2)/2 - p3*x1".into(),
            f: vec!["u1".into(), "u2".into()],
            g: vec![],
            h: h.iter().map(|s| s.to_string()).collect(),
        },
        ExprDims {
            state: 2,
            control: 2,
            param: 3,
        },
        1.0,
        vec![0.0, 0.0],
        ControlSet::open(),
        DerivMode::DualAd,
    )
}

fn multiplier_uniqueness() -> Outcome {
    let pi = [0.7, 1.1, 0.0];
    let direct = planar(&["x1 - p1", "x1 + x2 - p2"])?;
    let swapped = planar(&["x1 + x2 - p2", "x1 - p1"])?;
    // Straight lines to the targets: u = (π₁, π₂ − π₁).
    let u = PiecewiseFn::constant(1.0, vec![pi[0], pi[1] - pi[0]])?;
    let proc = simulate(&direct, &u, &pi)?;
    let m1 = solve_multipliers_li(&direct, &proc)?;
    let m2 = solve_multipliers_li(&swapped, &proc)?;
    let perm_err = (m1.mu[0] - m2.mu[1]).abs().max((m1.mu[1] - m2.mu[0]).abs()).max((m1.lambda[0] - m2.lambda[0]).abs());
    // p = μ₁(1, 0) + μ₂(1, 1) = u.
    let oracle_err = (m1.mu[0] - (pi[0] - (pi[1] - pi[0]))).abs().max((m1.mu[1] - (pi[1] - pi[0])).abs());

    let dup = planar(&["x1 - p1", "x1 - p1"])?;
    let li = match solve_multipliers_li(&dup, &proc) {
        Err(OcError::LiViolated { rank, required, .. }) => format!("LI violated (rank {rank} of {required})"),
        Err(e) => return Ok((false, format!("duplicate constraint gave {e}"))),
        Ok(m) => return Ok((false, format!("duplicate constraint accepted with μ = {:?}", m.mu))),
    };
    Ok((
        perm_err <= 1e-10 && oracle_err <= 1e-10,
        format!("permutation error {perm_err:.1e}, closed form error {oracle_err:.1e} (tol 1e-10); duplicate: {li}"),
    ))
}

fn mayer_parity() -> Outcome {
    let lq = builtins::lq_scalar();
    let steer = builtins::steering();
    let planar = planar(&["x1 - p1", "x1 + x2 - p2"])?;
    let planar_pi = [0.7, 1.1, 0.0];
    let cases = [
        (lq.clone(), builtins::lq_scalar_optimum(1.0, 1.0, 0.3, 1.0)?),
        (steer.clone(), builtins::steering_optimum(1.0, 0.0, 0.6)?),
        (planar.clone(), simulate(&planar, &PiecewiseFn::constant(1.0, vec![0.7, 0.4])?, &planar_pi)?),
    ];
    let (mut worst, mut worst_sigma) = (0.0f64, 0.0f64);
    for (p, proc) in &cases {
        let mayer = augment_to_mayer(p);
        let lifted = lift_process(p, proc)?;
        worst = worst.max((criterion(p, proc)? - criterion(&mayer, &lifted)?).abs());
        let mb = compute_multipliers(p, proc)?;
        let mm = compute_multipliers(&mayer, &lifted)?;
        worst = worst.max(dist(&mb.lambda, &mm.lambda)).max(dist(&mb.mu, &mm.mu));
        let pb = adjoint_backward(p, proc, mb.lambda0(), &transversality_covector(p, proc, &mb)?)?;
        let pm = adjoint_backward(&mayer, &lifted, mm.lambda0(), &transversality_covector(&mayer, &lifted, &mm)?)?;
        for k in 0..=20 {
            let t = p.horizon * k as f64 / 20.0;
            let (a, b) = (pb.value_at(t), pm.value_at(t));
            worst = worst.max(dist(&a, &b[1..]));
            worst_sigma = worst_sigma.max((b[0] - pm.terminal()[0]).abs());
        }
    }
    Ok((
        worst <= 1e-8 && worst_sigma <= 1e-9,
        format!("max value/multiplier/adjoint gap {worst:.1e} (tol 1e-8), σ-adjoint drift {worst_sigma:.1e} (tol 1e-9)"),
    ))
}

// 7

fn envelope_theorem() -> Outcome {
    let steer = builtins::steering();
    let fam = AnalyticFamily::builtin(&steer);
    let mut worst_total = 0.0f64;
    for pi in [1.0, 0.6, -0.4] {
        let rep = envelope_directional(&steer, &fam, &[pi], &[1.0])?;
        worst_total = worst_total.max((rep.total + (pi - 0.0) / 1.0).abs());
    }
    let hs = [1e-2, 1e-3, 1e-4, 1e-5];
    let total = envelope_directional(&steer, &fam, &[1.0], &[1.0])?.total;
    let table = value_fd_oracle(&steer, &fam, &[1.0], &[1.0], &hs)?;
    let cs: Vec<f64> = table.rows.iter().map(|r| r.forward.map_or(f64::NAN, |f| (f - total).abs() / r.h)).collect();
    let (cmin, cmax) = cs.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), c| (lo.min(*c), hi.max(*c)));
    let c_stable = cs.iter().all(|c| c.is_finite()) && cmax <= 2.0 * cmin;

    let lq = builtins::lq_scalar();
    let fam = AnalyticFamily::builtin(&lq);
    let pi = 0.3;
    let rep = envelope_directional(&lq, &fam, &[pi], &[1.0])?;
    let central = value_fd_oracle(&lq, &fam, &[pi], &[1.0], &[1e-4])?.rows[0].central.unwrap_or(f64::NAN);
    let fd_gap = (rep.total - central).abs();
    let closed = pi - (1.0 + pi) * 1f64.tanh();
    let closed_gap = (rep.total - closed).abs();
    Ok((
        worst_total <= 1e-10 && c_stable && fd_gap <= 1e-6 && closed_gap <= 1e-8,
        format!(
            "steering total error {worst_total:.1e} (tol 1e-10), forward FD C ∈ [{cmin:.4}, {cmax:.4}] over h = 1e-2..1e-5; \
             parametric lq_scalar |envelope − central FD| {fd_gap:.1e} (tol 1e-6), closed form gap {closed_gap:.1e}"
        ),
    ))
}

// 8

fn gateaux_linearity() -> Outcome {
    let p = planar(&["x1 - p1", "x1 + x2 - p2"])?;
    let pi0 = [0.7, 1.1, 0.2];
    let fam = ShootingFamily::new(&p, &pi0, (&[0.7, 0.4], &[0.3, 0.4]), ShootingOptions::default())?;
    let grad = envelope_gradient(&p, &fam, &pi0)?.gradient;
    let mut rng = rng();
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let d: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
        let total = envelope_directional(&p, &fam, &pi0, &d)?.total;
        let lin: f64 = grad.iter().zip(&d).map(|(g, v)| g * v).sum();
        worst = worst.max((total - lin).abs());
    }
    Ok((worst <= 1e-10, format!("max |∇V·δπ − D⁺V[π₀; δπ]| {worst:.1e} over 10 directions (tol 1e-10)")))
}

// 9

fn strictly_increasing(values: &[Option<f64>]) -> bool {
    values.iter().all(|v| v.is_some())
        && values.windows(2).all(|w| {
            let (a, b) = (w[0].unwrap(), w[1].unwrap());
            (a <= ZERO_FLOOR && b <= ZERO_FLOOR) || a < b
        })
}

fn summary(scan: &ContinuityScan) -> String {
    scan.deviations().iter().map(|d| d.map_or("-".into(), |v| format!("{v:.1e}"))).collect::<Vec<_>>().join(" < ")
}

fn continuity_scans() -> Outcome {
    let opts = ScanOptions::default();
    let steer = builtins::steering();
    let mult = multiplier_continuity_scan(&steer, &AnalyticFamily::builtin(&steer), &[0.6], &opts)?;
    let lq = builtins::lq_scalar();
    let fam = AnalyticFamily::new(|pi| builtins::lq_scalar_optimum(1.0, 1.0, pi[0], 1.0));
    let adj = adjoint_continuity_scan(&lq, &fam, &[0.3], &opts)?;
    let grad = frechet_continuity_check(&lq, &fam, &[0.3], &opts)?;
    let secondary: Vec<Option<f64>> = grad.shells.iter().map(|s| s.max_secondary).collect();
    let ok = [&mult, &adj, &grad].iter().all(|s| s.monotone && strictly_increasing(&s.deviations())) && strictly_increasing(&secondary);
    let sec = secondary.iter().map(|d| d.map_or("-".into(), |v| format!("{v:.1e}"))).collect::<Vec<_>>().join(" < ");
    Ok((
        ok,
        format!(
            "multipliers {}; adjoint {}; gradient {}; Fréchet residual {sec}",
            summary(&mult),
            summary(&adj),
            summary(&grad)
        ),
    ))
}

// 10

fn hamiltonian_regularity() -> Outcome {
    let mut worst_ch = 0.0f64;
    let mut worst_dh = 0.0f64;
    let mut ok = true;
    let lq = builtins::lq_scalar();
    let base = builtins::lq_scalar_optimum(1.0, 1.0, 0.0, 1.0)?;
    let grid = Grid::with_interior(1.0, &[0.25, 0.5, 0.75])?;
    let regridded = Process::new(base.x.on_grid(&grid)?, base.u.on_grid(&grid)?, base.pi.clone());
    // Bang-bang: H = u(t − ½) is maximized on [−1, 1] by a switch at ½.
    let switch = bind_problem(
        "switch",
        &ExprSources {
            f0: "u1*(t - 0.5)".into(),
            f: vec!["u1".into()],
            g: vec![],
            h: vec![],
        },
        ExprDims {
            state: 1,
            control: 1,
            param: 0,
        },
        1.0,
        vec![0.0],
        ControlSet::Box {
            lower: vec![-1.0],
            upper: vec![1.0],
        },
        DerivMode::DualAd,
    )?;
    let bang = PiecewiseFn::step(Grid::with_interior(1.0, &[0.5])?, vec![vec![-1.0], vec![1.0]])?;
    let bang = simulate(&switch, &bang, &[])?;
    for (p, proc) in [(&lq, &regridded), (&switch, &bang)] {
        let cert = verify_certificate(p, proc, &CertificateInputs::default());
        ok &= cert.all_pass();
        worst_ch = worst_ch.max(cert.condition("CH").map_or(f64::NAN, |c| c.residual));
        worst_dh = worst_dh.max(cert.condition("dH").map_or(f64::NAN, |c| c.residual));
    }
    ok &= worst_ch <= 1e-6 && worst_dh <= 1e-6;
    Ok((
        ok,
        format!("CH jump {worst_ch:.1e}, dH residual {worst_dh:.1e} (tol 1e-6) on regridded lq_scalar and a bang-bang switch"),
    ))
}

// 11

const VARS: [&str; 3] = ["x1", "x2", "u1"];

fn ad_correctness() -> Outcome {
    let scope = Scope::running(2, 1, 0);
    let mut rng = rng();
    let mut mismatches = 0;
    let mut cases = 0;
    for _ in 0..60 {
        let terms: Vec<(f64, [i32; 3])> = (0..rng.random_range(1..=5))
            .map(|_| {
                let c = rng.random_range(-16..=16) as f64 / 8.0;
                (c, [rng.random_range(0..=3), rng.random_range(0..=3), rng.random_range(0..=3)])
            })
            .collect();
        let src = terms
            .iter()
            .map(|(c, e)| {
                let mut s = format!("({c:?})");
                for (name, k) in VARS.iter().zip(e) {
                    if *k > 0 {
                        s.push_str(&format!("*{name}^{k}"));
                    }
                }
                s
            })
            .collect::<Vec<_>>()
            .join(" + ");
        let expr = parse(&src, &scope)?;
        for _ in 0..5 {
            let v: [f64; 3] = [0, 1, 2].map(|_| rng.random_range(-8..=8) as f64 / 4.0);
            let at = Point {
                t: 0.0,
                x: &v[..2],
                u: &v[2..],
                p: &[],
            };
            let got = expr.eval_dual(&at, None)?;
            let value: f64 = terms.iter().map(|(c, e)| c * (0..3).map(|i| v[i].powi(e[i])).product::<f64>()).sum();
            let grad: Vec<f64> = (0..3)
                .map(|j| {
                    terms
                        .iter()
                        .filter(|(_, e)| e[j] > 0)
                        .map(|(c, e)| {
                            let rest: f64 = (0..3).filter(|i| *i != j).map(|i| v[i].powi(e[i])).product();
                            c * e[j] as f64 * v[j].powi(e[j] - 1) * rest
                        })
                        .sum()
                })
                .collect();
            cases += 1;
            if got.value != value || got.grad[0] != 0.0 || got.grad[1..] != grad[..] {
                mismatches += 1;
            }
        }
    }

    let suite = [
        "sin(x1)*exp(u1) + log(1 + x2^2)",
        "tanh(x1*x2) - sqrt(2 + cos(u1))",
        "x1^u1 + exp(-x2)/x1",
        "abs(x1 - 3)*cos(x2 + u1)^2",
        "log(x1)*sin(t*u1) + sqrt(x1 + x2^2)",
    ];
    let mut worst_rel = 0.0f64;
    for src in suite {
        let expr = parse(src, &scope)?;
        for _ in 0..20 {
            let v = [rng.random_range(0.2..2.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0)];
            let point = |w: &[f64; 4]| (w[3], [w[0], w[1]], [w[2]]);
            let (t, x, u) = point(&v);
            let ad = expr.eval_dual(&Point { t, x: &x, u: &u, p: &[] }, None)?.grad;
            // Seed layout is [t, x1, x2, u1]; `v` stores [x1, x2, u1, t].
            for (slot, k) in [(0, 3), (1, 0), (2, 1), (3, 2)] {
                let h = 1e-5 * (1.0 + v[k].abs());
                let shifted = |d: f64| {
                    let mut w = v;
                    w[k] += d;
                    let (t, x, u) = point(&w);
                    expr.eval(&Point { t, x: &x, u: &u, p: &[] }, None)
                };
                let fd = (shifted(h)? - shifted(-h)?) / (2.0 * h);
                worst_rel = worst_rel.max((ad[slot] - fd).abs() / ad[slot].abs().max(1.0));
            }
        }
    }
    Ok((
        mismatches == 0 && worst_rel <= 1e-8,
        format!("dyadic polynomials: {mismatches} inexact of {cases}; transcendental: max relative gap to central FD {worst_rel:.1e} (tol 1e-8)"),
    ))
}

// 12

fn problems() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../problems")
}

fn cli_determinism() -> Outcome {
    let runs: [&[&str]; 3] = [
        &["verify", "--problem", "lq_scalar.json", "--seed", "7"],
        &["envelope", "--problem", "steering.json", "--scan-multipliers"],
        &["needle-study", "--problem", "lq_scalar.json"],
    ];
    let mut same = 0;
    for args in runs {
        let args: Vec<String> = args
            .iter()
            .map(|a| if a.ends_with(".json") { problems().join(a).display().to_string() } else { a.to_string() })
            .chain(std::iter::once("--no-timestamp".to_string()))
            .collect();
        let out: Vec<_> = (0..2)
            .map(|_| Command::new(env!("CARGO_BIN_EXE_octool")).args(&args).output())
            .collect::<Result<_, _>>()?;
        if out[0].status.success() && out[0].stdout == out[1].stdout && !out[0].stdout.is_empty() {
            same += 1;
        }
    }
    Ok((same == runs.len(), format!("{same} of {} commands byte-identical across two runs", runs.len())))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("fundamental theorem on piecewise polynomials", fundamental_theorem),
        ("resolvent against matrix exponential", resolvent_group_law),
        ("needle first-order expansion", needle_expansion),
        ("certificates on analytic optima", certificates),
        ("multiplier uniqueness", multiplier_uniqueness),
        ("Bolza/Mayer parity", mayer_parity),
        ("envelope formula", envelope_theorem),
        ("Gateaux linearity of the gradient", gateaux_linearity),
        ("continuity scans", continuity_scans),
        ("Hamiltonian regularity", hamiltonian_regularity),
        ("dual-number derivatives", ad_correctness),
        ("CLI determinism", cli_determinism),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (ok, detail) = run().unwrap_or_else(|e| (false, format!("error: {e}")));
        failures += usize::from(!ok);
        println!(
            "{} [{:>2}] {name}: {detail} ({:.1}s)",
            if ok { "PASS" } else { "FAIL" },
            i + 1,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
