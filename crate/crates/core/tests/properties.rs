use proptest::prelude::*;
use robstab_core::doa::{maximize_alpha, DoaParams};
use robstab_core::expr::{evaluate, parse, EvalContext};
use robstab_core::rndd::{classify_cells, project_to_state, Grid, StateProjection};
use robstab_core::{IntervalBox, LyapunovSpec, PlantSpec, SampleSeed, SampleStream, Purpose, X0Region};

mod common;

const VARS: [&str; 3] = ["x1", "x2", "u1"];

fn expr_text() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        (0.0f64..100.0).prop_map(|c| format!("{c:?}")),
        (0u32..20).prop_map(|c| c.to_string()),
        prop::sample::select(VARS.to_vec()).prop_map(String::from),
    ];
    leaf.prop_recursive(5, 40, 2, |inner| {
        prop_oneof![
            (inner.clone(), prop::sample::select(vec!['+', '-', '*', '/', '^']), inner.clone())
                .prop_map(|(a, op, b)| format!("({a}) {op} ({b})")),
            (inner.clone(), prop::sample::select(vec!["+", "-", "*", "/"]), inner.clone())
                .prop_map(|(a, op, b)| format!("{a} {op} {b}")),
            inner.clone().prop_map(|a| format!("-{a}")),
            (prop::sample::select(vec!["sin", "cos", "tan", "exp", "log", "sqrt", "abs", "tanh"]), inner)
                .prop_map(|(f, a)| format!("{f}({a})")),
        ]
    })
}

fn same(a: &Result<f64, robstab_core::expr::ExprError>, b: &Result<f64, robstab_core::expr::ExprError>) -> bool {
    match (a, b) {
        (Ok(x), Ok(y)) => x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()),
        (Err(_), Err(_)) => true,
        _ => false,
    }
}

proptest! {
    #[test]
    fn display_reparses_to_the_same_tree(text in expr_text(), vals in prop::array::uniform3(-3.0f64..3.0)) {
        let e = parse(&text, &VARS).unwrap();
        let shown = e.to_string();
        let back = parse(&shown, &VARS).unwrap();
        prop_assert_eq!(back.root(), e.root(), "{} -> {}", text, shown);
        let ctx = EvalContext::new(&VARS, &vals).unwrap();
        prop_assert!(same(&evaluate(&e, &ctx), &evaluate(&back, &ctx)));
        prop_assert!(same(&e.eval(&vals), &evaluate(&e, &ctx)));
    }

    #[test]
    fn future_box_is_centered_on_the_nominal_with_width_twice_the_bound(x in -1.0f64..1.0, u in -1.0f64..1.0) {
        let plant = common::plant();
        let b = plant.future_state_box(&[x], &[u]).unwrap();
        let f = plant.eval_nominal(&[x], &[u]).unwrap()[0];
        let d = plant.eval_error_bound(&[x], &[u]).unwrap()[0];
        prop_assert!(d >= 0.0);
        prop_assert!(b.contains(&[f]));
        prop_assert!((b.center()[0] - f).abs() <= 1e-15);
        prop_assert!((b.width(0) - 2.0 * d).abs() <= 1e-15);
    }

    #[test]
    fn level_sets_are_nested(a in 0.0f64..0.1, b in 0.0f64..0.1, x in -0.4f64..0.4) {
        let lyap = common::lyap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let l = lyap.eval(&[x]).unwrap();
        prop_assert!(l > lo || l <= hi);
    }

    #[test]
    fn certified_level_set_fits_in_the_flagged_states(flags in prop::collection::vec(any::<bool>(), 41), cap in 0.05f64..0.5) {
        let grid = Grid::new(IntervalBox::new(vec![-1.0], vec![1.0]).unwrap(), vec![41]).unwrap();
        let mut flags = flags;
        flags[20] = false;
        let proj = StateProjection { grid: grid.clone(), flags };
        let Ok(x0) = robstab_core::doa::compute_x0(&proj, cap) else { return Ok(()) };
        let lyap = LyapunovSpec::new(1, "x1^2").unwrap();
        let stream = SampleStream::new(SampleSeed(1), Purpose::LevelSet, 0);
        let r = maximize_alpha(&lyap, &proj, &x0, &DoaParams::auto(1), stream).unwrap();
        check_containment(&proj, &x0, r.alpha_star);
    }
}

fn check_containment(proj: &StateProjection, x0: &X0Region, alpha: f64) {
    for k in 0..=2000 {
        let x = -1.0 + 2.0 * k as f64 / 2000.0;
        if x * x <= alpha && x.abs() < 1.0 {
            let c = proj.grid.locate_linear(&[x]).unwrap();
            assert!(proj.flags[c] || x0.contains_cell(c), "x = {x} at alpha {alpha}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn cell_status_is_the_join_of_point_labels(seed in 0u64..1000, n_xbar in 1usize..20) {
        let plant = PlantSpec::new(1, 1, &["0.5*x1 + u1"], &["0.05*abs(x1) + 0.01*u1^2"]).unwrap();
        let lyap = LyapunovSpec::new(1, "x1^2").unwrap();
        let grid = Grid::new(IntervalBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap(), vec![12, 10]).unwrap();
        let labeled = robstab_core::rndd::build_filtered_set(&plant, &lyap, grid.region(), 3000, n_xbar, SampleSeed(seed)).unwrap();
        let est = classify_cells(&labeled, &grid).unwrap();
        for i in 0..labeled.len() {
            let c = grid.locate_linear(labeled.point(i)).unwrap();
            if !labeled.members[i] {
                prop_assert_ne!(est.status[c], robstab_core::CellStatus::Accepted);
            }
        }
        let proj = project_to_state(&est).unwrap();
        prop_assert_eq!(proj.flags.len(), 12);
        let total: u32 = est.points_per_cell.iter().sum();
        prop_assert_eq!(total as usize, 3000);
        prop_assert_eq!(est.counters.drawn_scalars(), 3000 * 2 + 3000 * n_xbar as u64);
        prop_assert_eq!(est.counters.decrease_checks, 3000 * n_xbar as u64);
    }
}
