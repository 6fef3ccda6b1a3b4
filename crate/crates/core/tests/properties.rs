use approx::assert_abs_diff_eq;
use octool_core::builtins;
use octool_core::envelope::{envelope_directional, AnalyticFamily};
use octool_core::exprdiff::{bind_problem, parse, ExprDims, ExprModel, ExprSources, FdExprModel, Point, Scope};
use octool_core::flow::{needle_control, NeedleVariation, SpikeList};
use octool_core::piecewise::merge_grids;
use octool_core::problem::{augment_to_mayer, criterion, lift_process};
use octool_core::{ControlSet, DerivMode, Grid, OcpModel, PiecewiseFn, Process};
use proptest::prelude::*;

fn interior(horizon: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.02..0.98f64, 0..5).prop_map(move |mut v| {
        v.sort_by(f64::total_cmp);
        v.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
        v.into_iter().map(|s| s * horizon).collect()
    })
}

/// Source text over `x1, x2, u1, p1` using only literals that print back
/// exactly.
fn expr_source() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        prop::sample::select(vec!["x1", "x2", "u1", "p1", "t"]).prop_map(String::from),
        (0u32..40).prop_map(|k| format!("{}", k as f64 / 4.0)),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), prop::sample::select(vec!["+", "-", "*", "/"]), inner.clone()).prop_map(|(a, op, b)| format!("({a}) {op} ({b})")),
            (prop::sample::select(vec!["sin", "cos", "tanh", "exp"]), inner.clone()).prop_map(|(f, a)| format!("{f}(({a})/8)")),
            inner.clone().prop_map(|a| format!("-({a})")),
            inner.prop_map(|a| format!("({a})^2")),
        ]
    })
}

fn scope() -> Scope {
    Scope::running(2, 1, 1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn printed_expressions_parse_back(src in expr_source()) {
        let e = parse(&src, &scope()).unwrap();
        let again = parse(&e.to_string(), &scope()).unwrap();
        prop_assert_eq!(&e, &again);
        prop_assert_eq!(e.to_string(), again.to_string());
    }

    #[test]
    fn dual_value_matches_plain_evaluation(src in expr_source(), v in prop::array::uniform4(-2.0..2.0f64)) {
        let e = parse(&src, &scope()).unwrap();
        let at = Point { t: v[3], x: &v[..2], u: &v[2..3], p: &[0.5] };
        if let (Ok(plain), Ok(dual)) = (e.eval(&at, None), e.eval_dual(&at, None)) {
            prop_assert!(plain == dual.value || (plain.is_nan() && dual.value.is_nan()));
        }
    }

    #[test]
    fn dual_partials_agree_with_differences(src in expr_source(), v in prop::array::uniform4(-1.0..1.0f64)) {
        let e = parse(&src, &scope()).unwrap();
        let eval = |w: &[f64; 4]| e.eval(&Point { t: w[3], x: &w[..2], u: &w[2..3], p: &[0.5] }, None);
        let Ok(d) = e.eval_dual(&Point { t: v[3], x: &v[..2], u: &v[2..3], p: &[0.5] }, None) else {
            return Ok(());
        };
        prop_assume!(d.value.is_finite() && d.value.abs() < 1e6);
        // Seed slots: t, x1, x2, u1.
        for (slot, k) in [(0usize, 3usize), (1, 0), (2, 1), (3, 2)] {
            let h = 1e-6;
            let mut a = v;
            let mut b = v;
            a[k] += h;
            b[k] -= h;
            let (Ok(fa), Ok(fb)) = (eval(&a), eval(&b)) else { continue };
            let fd = (fa - fb) / (2.0 * h);
            prop_assume!(fd.is_finite());
            prop_assert!((d.grad[slot] - fd).abs() <= 1e-4 * (1.0 + fd.abs()), "slot {slot}: {} vs {fd}", d.grad[slot]);
        }
    }

    #[test]
    fn ad_and_fd_models_agree(x in prop::array::uniform2(-1.0..1.0f64), u in -1.0..1.0f64, p in -1.0..1.0f64, t in 0.0..1.0f64) {
        let src = ExprSources {
            f0: "-(u1^2)/2 + p1*sin(x1)*x2".into(),
            f: vec!["x2 + u1*x1".into(), "cos(t)*tanh(x1) - p1*u1".into()],
            g: vec!["x1*x2".into(), "1 - x1^2".into()],
            h: vec!["exp(x2/4) - p1".into()],
        };
        let dims = ExprDims { state: 2, control: 1, param: 1 };
        let ad = ExprModel::new(&src, dims).unwrap();
        let fd = FdExprModel(ExprModel::new(&src, dims).unwrap());
        let (ua, pa) = ([u], [p]);
        let (fa, ff) = (ad.vector_field_partials(t, &x, &ua, &pa), fd.vector_field_partials(t, &x, &ua, &pa));
        prop_assert!((&fa.dx - &ff.dx).amax() < 1e-7);
        prop_assert!((&fa.du - &ff.du).amax() < 1e-7);
        prop_assert!((&fa.dp - &ff.dp).amax() < 1e-7);
        let (ra, rf) = (ad.running_reward_partials(t, &x, &ua, &pa), fd.running_reward_partials(t, &x, &ua, &pa));
        for (a, b) in ra.dx.iter().chain(&ra.du).chain(&ra.dp).zip(rf.dx.iter().chain(&rf.du).chain(&rf.dp)) {
            prop_assert!((a - b).abs() < 1e-7);
        }
        for alpha in 0..2 {
            let (a, b) = (ad.terminal_partials(alpha, &x, &pa), fd.terminal_partials(alpha, &x, &pa));
            for (a, b) in a.dx.iter().zip(&b.dx) {
                prop_assert!((a - b).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn hamiltonian_is_affine_in_the_multiplier_pair(
        l0 in 0.0..2.0f64, l1 in 0.0..2.0f64, p in -2.0..2.0f64, q in -2.0..2.0f64, s in -3.0..3.0f64,
        x in -1.0..1.0f64, u in -1.0..1.0f64,
    ) {
        let problem = builtins::lq_scalar();
        let h = |lambda0: f64, adj: f64| problem.hamiltonian(lambda0).value(0.3, &[x], &[u], &[adj], &[0.2]);
        let combined = h(l0 + s * l1, p + s * q);
        prop_assert!((combined - (h(l0, p) + s * h(l1, q))).abs() <= 1e-12 * (1.0 + combined.abs()));
    }

    #[test]
    fn criterion_is_invariant_under_refinement(pi in -1.0..1.0f64, cuts in interior(1.0)) {
        let problem = builtins::lq_scalar();
        let proc = builtins::lq_scalar_optimum(1.0, 1.0, pi, 1.0).unwrap();
        let grid = Grid::with_interior(1.0, &cuts).unwrap();
        let fine = Process::new(proc.x.on_grid(&grid).unwrap(), proc.u.on_grid(&grid).unwrap(), proc.pi.clone());
        assert_abs_diff_eq!(criterion(&problem, &proc).unwrap(), criterion(&problem, &fine).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn mayer_lift_keeps_the_criterion(pi in -1.0..1.0f64, level in -1.0..1.0f64) {
        let problem = builtins::lq_scalar();
        let u = PiecewiseFn::step(Grid::with_interior(1.0, &[0.4]).unwrap(), vec![vec![level], vec![-level]]).unwrap();
        let proc = octool_core::flow::simulate(&problem, &u, &[pi]).unwrap();
        let lifted = lift_process(&problem, &proc).unwrap();
        let mayer = augment_to_mayer(&problem);
        assert_abs_diff_eq!(criterion(&problem, &proc).unwrap(), criterion(&mayer, &lifted).unwrap(), epsilon = 1e-10);
        assert_abs_diff_eq!(lifted.x.value_at(0.0)[0], 0.0);
    }

    #[test]
    fn merged_grid_contains_both(a in interior(2.0), b in interior(2.0)) {
        let (ga, gb) = (Grid::with_interior(2.0, &a).unwrap(), Grid::with_interior(2.0, &b).unwrap());
        let m = merge_grids(&ga, &gb).unwrap();
        prop_assert!(m.breakpoints().windows(2).all(|w| w[0] < w[1]));
        for t in ga.breakpoints().iter().chain(gb.breakpoints()) {
            prop_assert!(m.breakpoints().iter().any(|s| (s - t).abs() <= 1e-12 * 2.0));
        }
    }

    #[test]
    fn json_dump_keeps_one_sided_limits(cuts in interior(1.0), vals in prop::collection::vec(-5.0..5.0f64, 6)) {
        let grid = Grid::with_interior(1.0, &cuts).unwrap();
        let values: Vec<Vec<f64>> = (0..grid.num_segments()).map(|i| vec![vals[i]]).collect();
        let f = PiecewiseFn::step(grid.clone(), values).unwrap();
        let g = PiecewiseFn::from_json(&f.to_json(4)).unwrap();
        for k in 0..grid.num_segments() {
            prop_assert_eq!(f.right_limit(k), g.right_limit(k));
        }
        for k in 1..=grid.num_segments() {
            prop_assert_eq!(f.left_limit(k), g.left_limit(k));
        }
    }

    #[test]
    fn projection_is_idempotent_and_inside(u in prop::collection::vec(-10.0..10.0f64, 3)) {
        let set = ControlSet::Box { lower: vec![-1.0, 0.0, -2.0], upper: vec![1.0, 0.5, 3.0] };
        let p = set.project(&u);
        prop_assert!(set.contains(&p, 0.0));
        prop_assert_eq!(set.project(&p), p);
    }

    #[test]
    fn needle_control_equals_spike_value_inside(t0 in 0.1..0.8f64, a in 1e-4..0.05f64, v in -3.0..3.0f64) {
        let u0 = PiecewiseFn::from_fn(1.0, 1, |t| vec![t.sin()]).unwrap();
        let spikes = SpikeList::new(vec![(t0, vec![v])], 1.0, &ControlSet::open()).unwrap();
        let nv = NeedleVariation::new(spikes, vec![a]).unwrap();
        let ua = needle_control(&u0, &nv).unwrap();
        let (_, lo, hi) = nv.active_intervals()[0];
        prop_assert!((hi - lo - a).abs() < 1e-12);
        prop_assert_eq!(ua.value_at(0.5 * (lo + hi))[0], v);
        for t in [0.05, 0.95] {
            if t < lo || t >= hi {
                prop_assert_eq!(ua.value_at(t)[0], t.sin());
            }
        }
    }

    #[test]
    fn steering_envelope_is_linear_in_the_target(pi in -2.0..2.0f64, d in -2.0..2.0f64) {
        let p = builtins::steering();
        let fam = AnalyticFamily::builtin(&p);
        let rep = envelope_directional(&p, &fam, &[pi], &[d]).unwrap();
        prop_assert!((rep.total + pi * d).abs() <= 1e-12 * (1.0 + (pi * d).abs()));
    }

    #[test]
    fn expression_steering_matches_builtin_value(pi in -1.5..1.5f64) {
        let src = ExprSources { f0: "-(u1^2)/2".into(), f: vec!["u1".into()], g: vec![], h: vec!["x1 - p1".into()] };
        let dims = ExprDims { state: 1, control: 1, param: 1 };
        let p = bind_problem("s", &src, dims, 1.0, vec![0.0], ControlSet::open(), DerivMode::DualAd).unwrap();
        let u = PiecewiseFn::constant(1.0, vec![pi]).unwrap();
        let proc = octool_core::flow::simulate(&p, &u, &[pi]).unwrap();
        assert_abs_diff_eq!(criterion(&p, &proc).unwrap(), -0.5 * pi * pi, epsilon = 1e-12);
        assert_abs_diff_eq!(proc.terminal_state()[0], pi, epsilon = 1e-12);
    }
}
