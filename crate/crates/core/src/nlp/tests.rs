use super::*;
use super::examples::{Quadratic, RosenbrockCircle, SquareAboveOne};

#[test]
fn convex_quadratic_in_one_iteration() {
    let sol = solve(&Quadratic::new(vec![5.0, -3.0, 2.0]), &SolverConfig::default()).unwrap();
    assert_eq!(sol.status, SolveStatus::Converged);
    assert_eq!(sol.iterations, 1);
    let exact = Quadratic::p().lu().solve(&(-Quadratic::q())).unwrap();
    for i in 0..3 {
        assert!((sol.x[i] - exact[i]).abs() < 1e-9);
    }
    assert!(sol.kkt.norm() <= 1e-6);
}

#[test]
fn square_above_one() {
    let sol = solve(&SquareAboveOne::new(3.0), &SolverConfig::default()).unwrap();
    assert_eq!(sol.status, SolveStatus::Converged);
    assert!((sol.x[0] - 1.0).abs() < 1e-8);
    assert!((sol.mu[0] - 2.0).abs() < 1e-6);
    assert!(sol.kkt.norm() <= 1e-6);
}

#[test]
fn rosenbrock_on_circle_matches_grid_search() {
    // Fine parametric grid over the circle, refined around the best cell.
    let f = |t: f64| {
        let (a, b) = (t.cos(), t.sin());
        (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
    };
    let n = 200_000;
    let mut best = (f64::INFINITY, 0.0);
    for k in 0..n {
        let t = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
        let v = f(t);
        if v < best.0 {
            best = (v, t);
        }
    }
    let (ga, gb) = (best.1.cos(), best.1.sin());
    let sol = solve(&RosenbrockCircle::new(vec![0.5, 0.5]), &SolverConfig::default()).unwrap();
    assert_eq!(sol.status, SolveStatus::Converged);
    assert!(sol.kkt.norm() <= 1e-6);
    assert!((sol.x[0] - ga).abs() < 1e-4 && (sol.x[1] - gb).abs() < 1e-4, "{:?} vs ({ga}, {gb})", sol.x);
}

#[test]
fn derivative_check_on_linear_objective_is_exact() {
    struct Linear(Layout, Vec<f64>, Vec<f64>);
    impl NlpProblem for Linear {
        fn layout(&self) -> &Layout {
            &self.0
        }
        fn n_eq(&self) -> usize {
            0
        }
        fn n_ineq(&self) -> usize {
            0
        }
        fn lower(&self) -> &[f64] {
            &self.1
        }
        fn upper(&self) -> &[f64] {
            &self.2
        }
        fn initial_guess(&self) -> Vec<f64> {
            vec![0.0; 2]
        }
        fn values(&self, x: &[f64]) -> Result<Values, EvalError> {
            Ok(Values { f: 3.0 * x[0] - 2.0 * x[1], c: DVector::zeros(0), d: DVector::zeros(0) })
        }
        fn derivatives(&self, _: &[f64]) -> Result<Derivatives, EvalError> {
            Ok(Derivatives {
                grad: DVector::from_vec(vec![3.0, -2.0]),
                jc: DMatrix::zeros(0, 2),
                jd: DMatrix::zeros(0, 2),
            })
        }
        fn hessian(&self, _: &[f64], _: &[f64], _: &[f64]) -> Result<DMatrix<f64>, EvalError> {
            Ok(DMatrix::zeros(2, 2))
        }
    }
    let mut layout = Layout::default();
    layout.push("x", 2);
    let p = Linear(layout, vec![f64::NEG_INFINITY; 2], vec![f64::INFINITY; 2]);
    let rep = check_derivatives(&p, &[0.3, -1.7]).unwrap();
    assert!(rep.max_rel_error < 1e-9, "{rep:?}");
}

#[test]
fn inconsistent_bounds_rejected() {
    let mut p = SquareAboveOne::new(0.0);
    p.lo[0] = 2.0;
    p.hi[0] = 1.0;
    assert!(matches!(solve(&p, &SolverConfig::default()), Err(NlpError::InconsistentBounds { .. })));
}

#[test]
fn iterate_log_written() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("iters.log");
    let cfg = SolverConfig { iterate_log: Some(path.clone()), ..SolverConfig::default() };
    solve(&RosenbrockCircle::new(vec![0.5, 0.5]), &cfg).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    assert!(text.lines().count() >= 2);
    assert!(text.contains("Converged"));
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn merit_decreases_on_every_accepted_step(a in -1.5f64..1.5, b in -1.5f64..1.5) {
            prop_assume!(a.abs() + b.abs() > 0.2);
            let sol = solve(&RosenbrockCircle::new(vec![a, b]), &SolverConfig { max_iter: 200, ..Default::default() }).unwrap();
            for (before, after) in &sol.merit_steps {
                prop_assert!(after <= before);
            }
        }

        #[test]
        fn solves_are_deterministic(a in -1.0f64..1.0, b in -1.0f64..1.0) {
            prop_assume!(a.abs() + b.abs() > 0.2);
            let cfg = SolverConfig::default();
            let s1 = solve(&RosenbrockCircle::new(vec![a, b]), &cfg).unwrap();
            let s2 = solve(&RosenbrockCircle::new(vec![a, b]), &cfg).unwrap();
            prop_assert_eq!(s1.x, s2.x);
            prop_assert_eq!(s1.lambda, s2.lambda);
        }

        #[test]
        fn square_above_one_from_anywhere(x0 in -10.0f64..10.0) {
            let sol = solve(&SquareAboveOne::new(x0), &SolverConfig::default()).unwrap();
            prop_assert_eq!(sol.status, SolveStatus::Converged);
            prop_assert!((sol.x[0] - 1.0).abs() < 1e-8);
        }
    }
}
